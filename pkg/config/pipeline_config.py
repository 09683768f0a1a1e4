#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pipeline configuration

PipelineConfig is the single resolved description of a simulation study.
Resolution order: dataclass defaults < profile < config file < CLI overrides.
"""
import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

from config.settings import (
    DEFAULT_TARGET_FDRS,
    ModelDefaults,
    RuntimeConfig,
    SimulationDefaults,
    get_profile,
)
from utils.errors import FileOperationError, ValidationError
from utils.validators import ConfigValidator

TRAIT_KINDS = ('quantitative', 'dichotomous')

METHODS = (
    'hidemk-derand',
    'hidemk',
    'demk',
    'hidemk-single',
    'hidemk-relu',
    'marginal',
    'lasso',
    'ridge',
)


@dataclass
class PipelineConfig:
    trait: str = 'quantitative'
    n: int = 2000
    p: int = 220
    rho: float = SimulationDefaults.RHO
    maf_min: float = SimulationDefaults.MAF_MIN
    maf_max: float = SimulationDefaults.MAF_MAX
    mac_min: int = SimulationDefaults.MAC_MIN
    r_max: float = SimulationDefaults.R_MAX
    n_causal: int = SimulationDefaults.N_CAUSAL
    variance_target: Optional[float] = None
    signal_scale: float = 1.0
    m_knockoffs: int = ModelDefaults.KNOCKOFFS
    knockoff_window: int = ModelDefaults.KNOCKOFF_WINDOW
    target_fdrs: List[float] = field(default_factory=lambda: list(DEFAULT_TARGET_FDRS))
    replicates: int = 50
    methods: List[str] = field(default_factory=lambda: ['hidemk-derand', 'marginal', 'lasso', 'ridge'])
    ensemble_size: int = ModelDefaults.ENSEMBLE_SIZE
    aggregate: str = 'median'
    sigma: int = ModelDefaults.SIGMA
    theta: int = ModelDefaults.THETA
    dense_widths: List[int] = field(default_factory=lambda: list(ModelDefaults.DENSE_WIDTHS))
    learning_rate: float = ModelDefaults.LEARNING_RATE
    batch_size: Optional[int] = None
    cv_folds: int = ModelDefaults.CV_FOLDS
    cv_draws: int = ModelDefaults.CV_DRAWS
    l1_grid: List[float] = field(default_factory=lambda: list(ModelDefaults.L1_GRID))
    epoch_grid: List[int] = field(default_factory=lambda: list(ModelDefaults.EPOCH_GRID))
    validation_fraction: float = 0.2
    master_seed: int = 20240101
    threads: int = RuntimeConfig.THREADS
    output_dir: str = RuntimeConfig.OUTPUT_DIR
    profile: str = 'default'

    # ==================== derived ====================

    @property
    def resolved_variance_target(self) -> float:
        base = (self.variance_target if self.variance_target is not None
                else SimulationDefaults.VARIANCE_TARGET[self.trait])
        return base * self.signal_scale

    def resolved_batch_size(self, n_samples: int) -> int:
        if self.batch_size is not None:
            return int(self.batch_size)
        return max(1, min(ModelDefaults.BATCH_SIZE, n_samples // 4))

    # ==================== construction ====================

    @classmethod
    def field_names(cls):
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict, profile: Optional[str] = None) -> 'PipelineConfig':
        """Build a config from profile defaults overlaid with ``data``"""
        data = dict(data or {})
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ValidationError(f"Unknown config keys: {sorted(unknown)}",
                                  payload={'fields': sorted(unknown)})

        profile_name = profile or data.get('profile') or 'default'
        merged = {k: v for k, v in get_profile(profile_name).items() if k in cls.field_names()}
        merged.update(data)
        merged['profile'] = profile_name

        for key in ('target_fdrs', 'methods', 'dense_widths', 'l1_grid', 'epoch_grid'):
            if key in merged and merged[key] is not None:
                merged[key] = list(merged[key])

        config = cls(**merged)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: str, overrides: Optional[dict] = None,
                  profile: Optional[str] = None) -> 'PipelineConfig':
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                data = json.load(fh)
        except OSError as e:
            raise FileOperationError(f"Cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ValidationError(f"Config {path} is not valid JSON: {e}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, profile=profile)

    def replace(self, **changes) -> 'PipelineConfig':
        data = self.to_dict()
        data.update(changes)
        return PipelineConfig.from_dict(data, profile=self.profile)

    def to_dict(self) -> dict:
        return asdict(self)

    # ==================== validation ====================

    def validate(self):
        v = ConfigValidator(self.to_dict())
        v.require_choice('trait', TRAIT_KINDS)
        v.require_integer('n', min_value=10)
        v.require_integer('p', min_value=2)
        v.require_float('rho', min_value=0.0, max_value=1.0)
        v.check(self.rho < 1.0, 'rho', "rho must be < 1")
        v.require_float('maf_min', min_value=0.0, max_value=0.5, inclusive=True)
        v.check(0.0 < self.maf_min <= self.maf_max <= 0.5, 'maf_max',
                "require 0 < maf_min <= maf_max <= 0.5")
        v.require_integer('mac_min', min_value=0)
        v.require_float('r_max', min_value=0.0, max_value=1.0)
        v.require_integer('n_causal', min_value=1)
        v.require_float('signal_scale', min_value=0.0, inclusive=False)
        if self.variance_target is not None:
            v.require_float('variance_target', min_value=0.0, inclusive=False)
        v.require_integer('m_knockoffs', min_value=1)
        v.require_integer('knockoff_window', min_value=1)
        v.require_increasing('target_fdrs', min_value=0.0, max_value=1.0)
        v.require_integer('replicates', min_value=1)
        v.require_subset('methods', METHODS)
        v.require_integer('ensemble_size', min_value=1)
        v.require_choice('aggregate', ('median', 'mean'))
        v.require_integer('sigma', min_value=1)
        v.require_integer('theta', min_value=1)
        v.require_float('learning_rate', min_value=0.0)
        v.require_integer('cv_folds', min_value=2)
        v.require_integer('cv_draws', min_value=1)
        v.require_float('validation_fraction', min_value=0.0, max_value=1.0, inclusive=False)
        v.require_integer('threads', min_value=1)
        v.check(all(int(w) >= 1 for w in self.dense_widths), 'dense_widths',
                "dense widths must be >= 1")
        v.check(len(self.l1_grid) > 0 and all(x >= 0 for x in self.l1_grid), 'l1_grid',
                "l1_grid must be non-empty and non-negative")
        v.check(len(self.epoch_grid) > 0 and all(int(e) >= 1 for e in self.epoch_grid),
                'epoch_grid', "epoch_grid must be non-empty positive integers")
        if self.batch_size is not None:
            v.require_integer('batch_size', min_value=1)
        v.raise_if_invalid()

    def check_methods(self):
        """Multiple-knockoff methods cannot run on a single knockoff copy"""
        multi = sorted(set(self.methods) - {'marginal', 'lasso', 'ridge', 'hidemk-single'})
        if multi and self.m_knockoffs < 2:
            raise ValidationError(f"Methods {multi} need m_knockoffs >= 2, got {self.m_knockoffs}",
                                  payload={'fields': ['m_knockoffs']})
