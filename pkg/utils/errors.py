#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Error handling module
Custom exceptions and the command-line error handler
"""
import json
import logging
import os
import sys
import traceback


# ========== Custom Exceptions ==========

class AppError(Exception):
    """Base application error"""
    exit_code = 1
    message = "Application error"

    def __init__(self, message=None, exit_code=None, payload=None):
        super().__init__(message or self.message)
        if message is not None:
            self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.payload = payload

    def to_dict(self):
        rv = dict(self.payload or ())
        rv['error'] = self.message
        rv['type'] = type(self).__name__
        rv['exit_code'] = self.exit_code
        return rv


class ValidationError(AppError):
    """Invalid input or configuration"""
    exit_code = 2
    message = "Validation failed"


class ShapeError(AppError):
    """Tensor or matrix shapes do not agree"""
    exit_code = 3
    message = "Shape mismatch"


class NumericalError(AppError):
    """Non-finite values or a singular system"""
    exit_code = 4
    message = "Numerical error"


class ConvergenceError(AppError):
    """Iterative solver failed to converge or bracket"""
    exit_code = 5
    message = "Solver did not converge"


class DataError(AppError):
    """Data cannot support the requested operation"""
    exit_code = 6
    message = "Data error"


class FileOperationError(AppError):
    """File operation error"""
    exit_code = 7
    message = "File operation failed"


# ========== Checks ==========

def ensure_finite(array, what="value"):
    """Raise NumericalError when an array holds NaN or Inf"""
    import numpy as np

    if not np.all(np.isfinite(array)):
        raise NumericalError(f"Non-finite {what}", payload={'where': what})
    return array


# ========== CLI Error Handler ==========

def handle_cli_error(error, out_dir=None):
    """Log an error, emit its machine-readable record and return the exit code"""
    logger = logging.getLogger('app')

    if isinstance(error, AppError):
        logger.error(f"Application Error: {error.message}", exc_info=True)
        record = error.to_dict()
    else:
        logger.critical(f"Unexpected error: {error}", exc_info=True)
        logger.critical(traceback.format_exc())
        record = {
            'error': str(error),
            'type': type(error).__name__,
            'exit_code': 1,
        }

    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, 'error.json'), 'w', encoding='utf-8') as fh:
                json.dump(record, fh, indent=2)
        except OSError:
            pass

    sys.stderr.write(json.dumps(record) + "\n")
    return record['exit_code']
