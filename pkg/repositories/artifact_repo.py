#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Artifact repository (file access layer)

Services orchestrate; this layer owns every read and write under an output
directory. Tabular artifacts are CSV through pandas, run records are JSON,
model checkpoints are a JSON header line followed by flat float64 tensors.
"""
import json
import logging
import os
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.settings import VERSION
from repositories.atomic import atomic_write
from utils.errors import FileOperationError, ShapeError, ValidationError
from utils.logger import EventLogger

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = 'hidemk-checkpoint-v1'


def _fmt_alpha(alpha: float) -> str:
    return f"{alpha:.2f}"


class ArtifactRepo:
    """Reads and writes run artifacts below ``root``"""

    def __init__(self, root: str):
        self.root = os.path.abspath(root)

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    # ==================== generic ====================

    def write_frame(self, frame: pd.DataFrame, name: str, kind: str = 'table') -> str:
        target = self.path(name)
        with atomic_write(target) as fh:
            frame.to_csv(fh, index=False, float_format='%.10g')
        EventLogger.artifact(target, kind)
        return target

    @staticmethod
    def read_frame(path: str) -> pd.DataFrame:
        try:
            return pd.read_csv(path)
        except FileNotFoundError:
            raise FileOperationError(f"File not found: {path}")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ValidationError(f"Cannot parse {path}: {e}")

    def write_json(self, data: dict, name: str, kind: str = 'record') -> str:
        target = self.path(name)
        with atomic_write(target) as fh:
            json.dump(data, fh, indent=2, default=_json_default)
        EventLogger.artifact(target, kind)
        return target

    @staticmethod
    def read_json(path: str) -> dict:
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise FileOperationError(f"File not found: {path}")
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} is not valid JSON: {e}")

    def write_manifest(self, command: str, config: dict, extra: Optional[dict] = None,
                       name: str = 'manifest.json') -> str:
        record = {
            'command': command,
            'version': VERSION,
            'created_at': datetime.now().isoformat(timespec='seconds'),
            'config': config,
        }
        record.update(extra or {})
        return self.write_json(record, name, kind='manifest')

    # ==================== genotypes and traits ====================

    def write_genotypes(self, G, prefix: str = '') -> Dict[str, str]:
        dosages = pd.DataFrame(G.dosages, columns=G.variant_ids)
        meta = pd.DataFrame({'variant_id': G.variant_ids, 'position': G.positions,
                             'maf': G.maf, 'mac': G.mac})
        return {
            'genotypes': self.write_frame(dosages, f'{prefix}genotypes.csv', 'genotypes'),
            'variants': self.write_frame(meta, f'{prefix}variants.csv', 'variants'),
        }

    @staticmethod
    def read_genotypes(path: str, variants_path: Optional[str] = None):
        from services.simulation_service import GenotypeMatrix

        frame = ArtifactRepo.read_frame(path)
        positions = None
        if variants_path and os.path.exists(variants_path):
            meta = ArtifactRepo.read_frame(variants_path).set_index('variant_id')
            positions = meta.loc[frame.columns, 'position'].to_numpy()
        return GenotypeMatrix.from_dosages(frame.to_numpy(dtype=np.float64),
                                           variant_ids=list(frame.columns), positions=positions)

    def write_trait(self, trait, name: str = 'trait.csv') -> str:
        frame = pd.DataFrame({'sample_id': [f"s{i + 1}" for i in range(trait.y.size)],
                              'y': trait.y, 'x1': trait.x1})
        return self.write_frame(frame, name, 'trait')

    @staticmethod
    def read_trait(path: str):
        frame = ArtifactRepo.read_frame(path)
        missing = {'y', 'x1'} - set(frame.columns)
        if missing:
            raise ValidationError(f"Trait file {path} lacks columns {sorted(missing)}")
        return frame['y'].to_numpy(dtype=np.float64), frame['x1'].to_numpy(dtype=np.float64)

    # ==================== knockoffs ====================

    def write_knockoffs(self, tensor, variant_ids: Sequence[str], name: str = 'knockoffs.csv') -> str:
        n, p, M = tensor.values.shape
        columns = [f"{vid}@k{m + 1}" for vid in variant_ids for m in range(M)]
        frame = pd.DataFrame(tensor.values.reshape(n, p * M), columns=columns)
        return self.write_frame(frame, name, 'knockoffs')

    @staticmethod
    def read_knockoffs(path: str, variant_ids: Optional[Sequence[str]] = None, seed: int = 0,
                       window: int = 0):
        from services.knockoff_service import KnockoffTensor

        frame = ArtifactRepo.read_frame(path)
        ids, copies = [], set()
        for column in frame.columns:
            vid, _, tag = column.rpartition('@k')
            if not vid or not tag.isdigit():
                raise ValidationError(f"Knockoff column '{column}' is not variant_id@k<m>")
            if vid not in ids:
                ids.append(vid)
            copies.add(int(tag))
        M = len(copies)
        if len(frame.columns) != len(ids) * M:
            raise ShapeError("Knockoff file does not hold the same copies for every variant")
        if variant_ids is not None and list(variant_ids) != ids:
            raise ShapeError("Knockoff variants do not match the genotype variants")
        values = frame.to_numpy(dtype=np.float64).reshape(len(frame), len(ids), M)
        return KnockoffTensor(values=values, M=M, seed=seed, window=window)

    # ==================== importance, selection, history ====================

    def write_importance(self, matrix, name: str = 'importance.csv') -> str:
        columns = {'variant_id': matrix.feature_ids}
        for m in range(matrix.T.shape[1]):
            columns[f't{m}'] = matrix.T[:, m]
        return self.write_frame(pd.DataFrame(columns), name, 'importance')

    @staticmethod
    def read_importance(path: str):
        from services.domain.knockoff_filter import ImportanceMatrix

        frame = ArtifactRepo.read_frame(path)
        score_columns = [c for c in frame.columns if c.startswith('t') and c[1:].isdigit()]
        if 'variant_id' not in frame.columns or len(score_columns) < 2:
            raise ValidationError(f"Importance file {path} needs variant_id,t0,t1,...")
        score_columns.sort(key=lambda c: int(c[1:]))
        return ImportanceMatrix(T=frame[score_columns].to_numpy(dtype=np.float64),
                                feature_ids=frame['variant_id'].astype(str).tolist())

    @staticmethod
    def selection_frame(stats, alphas: Sequence[float], method: Optional[str] = None) -> pd.DataFrame:
        frame = pd.DataFrame({'variant_id': stats.feature_ids, 'kappa': stats.kappa,
                              'tau': stats.tau, 'W': stats.W, 'q': stats.q})
        for alpha in alphas:
            frame[f'selected@{_fmt_alpha(alpha)}'] = (stats.q <= alpha).astype(int)
        if method is not None:
            frame.insert(0, 'method', method)
        return frame

    def write_selection(self, stats, alphas: Sequence[float], method: Optional[str] = None,
                        name: str = 'selection.csv') -> str:
        return self.write_frame(self.selection_frame(stats, alphas, method), name, 'selection')

    def write_history(self, history, name: str = 'history.csv') -> str:
        frame = pd.DataFrame({'epoch': history.epochs, 'train_loss': history.train_loss,
                              'val_loss': history.val_loss, 'val_metric': history.val_metric})
        return self.write_frame(frame, name, 'history')

    # ==================== pipeline reports ====================

    def write_report(self, report) -> str:
        name = os.path.join('reports', f"replicate_{report.replicate:04d}_{report.method}.json")
        return self.write_json(report.to_dict(), name, kind='report')

    def read_reports(self) -> List[dict]:
        directory = self.path('reports')
        if not os.path.isdir(directory):
            return []
        return [self.read_json(os.path.join(directory, f))
                for f in sorted(os.listdir(directory)) if f.endswith('.json')]

    # ==================== checkpoints ====================

    def write_checkpoint(self, model, name: str = 'model.ckpt') -> str:
        """JSON header line, then every parameter tensor as little-endian float64"""
        from dataclasses import asdict

        tensors, layout = [], []
        for idx, params in enumerate(model.state.params):
            if params is None:
                continue
            for key in ('W', 'b'):
                tensors.append(params[key])
                layout.append({'layer': idx, 'key': key, 'shape': list(params[key].shape)})
        header = {
            'magic': CHECKPOINT_MAGIC,
            'version': VERSION,
            'arch': asdict(model.arch),
            'run': asdict(model.run),
            'seed': model.state.seed,
            'layout': layout,
            'scaler_mean': model.scaler.mean.tolist(),
            'scaler_scale': model.scaler.scale.tolist(),
            'history': {'metric': model.history.metric, 'val_loss': model.history.val_loss,
                        'train_loss': model.history.train_loss,
                        'val_metric': model.history.val_metric},
        }
        target = self.path(name)
        with atomic_write(target, mode='wb') as fh:
            fh.write((json.dumps(header) + '\n').encode('utf-8'))
            for tensor in tensors:
                fh.write(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
        EventLogger.artifact(target, 'checkpoint')
        return target

    @staticmethod
    def read_checkpoint(path: str):
        from services.domain import nn_core
        from services.hidemk_service import (ArchitectureConfig, HiDeMKService, InputScaler,
                                             RunConfig, TrainedModel)

        try:
            with open(path, 'rb') as fh:
                header = json.loads(fh.readline().decode('utf-8'))
                payload = fh.read()
        except FileNotFoundError:
            raise FileOperationError(f"File not found: {path}")
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValidationError(f"{path} is not a checkpoint: {e}")
        if header.get('magic') != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path} is not a checkpoint")

        arch_fields = dict(header['arch'])
        arch_fields['dense_widths'] = tuple(arch_fields['dense_widths'])
        arch = ArchitectureConfig(**arch_fields)
        run = RunConfig(**header['run'])
        spec = HiDeMKService.with_l1(HiDeMKService.build(arch).spec, run.l1)
        state = nn_core.init_state(spec, header['seed'])

        flat = np.frombuffer(payload, dtype='<f8')
        offset = 0
        for entry in header['layout']:
            size = int(np.prod(entry['shape']))
            if offset + size > flat.size:
                raise ShapeError(f"Checkpoint {path} is truncated")
            state.params[entry['layer']][entry['key']] = flat[offset:offset + size].reshape(entry['shape']).copy()
            offset += size
        if offset != flat.size:
            raise ShapeError(f"Checkpoint {path} carries {flat.size - offset} unexpected values")

        saved = header.get('history', {})
        history = nn_core.TrainHistory(metric=saved.get('metric', 'mse'))
        for train_loss, val_loss, val_metric in zip(saved.get('train_loss', []),
                                                     saved.get('val_loss', []),
                                                     saved.get('val_metric', [])):
            history.append(train_loss, val_loss, val_metric)
        scaler = InputScaler(mean=np.asarray(header['scaler_mean']),
                             scale=np.asarray(header['scaler_scale']))
        return TrainedModel(arch=arch, run=run, spec=spec, state=state, history=history, scaler=scaler)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
