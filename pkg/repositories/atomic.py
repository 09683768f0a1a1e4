# -*- coding: utf-8 -*-
"""
Atomic file writes

The repository layer writes into a temporary sibling and renames it into
place on success, so readers never see a half-written artifact.

Usage:
    from repositories.atomic import atomic_write

    with atomic_write(path) as fh:
        fh.write(text)
        # normal exit -> renamed over ``path``
        # exception   -> temporary removed, error re-raised
"""
import os
import tempfile
from contextlib import contextmanager

from utils.errors import FileOperationError


@contextmanager
def atomic_write(path, mode='w', encoding='utf-8'):
    """Yield a file handle whose contents replace ``path`` on clean exit"""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    except OSError as e:
        raise FileOperationError(f"Cannot create {path}: {e}")

    binary = 'b' in mode
    fh = os.fdopen(fd, mode, **({} if binary else {'encoding': encoding, 'newline': ''}))
    try:
        yield fh
        fh.close()
        os.replace(tmp_path, path)
    except Exception:
        fh.close()
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
