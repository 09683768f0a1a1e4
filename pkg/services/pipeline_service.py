#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Simulation study pipeline

simulate -> knockoffs -> train / fit -> Q-values -> FDP and power at every
target FDR, for every (replicate, method) pair, then curve aggregation.
"""
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.pipeline_config import PipelineConfig
from repositories.artifact_repo import ArtifactRepo
from services.baseline_service import BaselineService
from services.domain import knockoff_filter as kf
from services.hidemk_service import ArchitectureConfig, HiDeMKService, TrainingData, run_seed
from services.knockoff_service import KnockoffService, KnockoffTensor
from services.simulation_service import (GenotypeMatrix, SimulationService, TraitData,
                                         TraitSpec, log_uniform_maf)
from services.task_manager import TaskManager
from utils.errors import DataError, ValidationError

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['method', 'trait', 'target_fdr', 'fdr_mean', 'fdr_se',
                 'power_mean', 'power_se', 'n_replicates']

# method -> (hierarchy levels, activation, knockoff copies: 'M' or 1, ensemble: True/False)
NETWORK_METHODS = {
    'hidemk-derand': (2, 'elu', 'M', True),
    'hidemk': (2, 'elu', 'M', False),
    'demk': (1, 'elu', 'M', False),
    'hidemk-single': (2, 'elu', 1, True),
    'hidemk-relu': (2, 'relu', 'M', True),
}

SEED_GENOTYPES, SEED_CAUSAL, SEED_TRAIT, SEED_KNOCKOFFS, SEED_MODEL = range(5)


@dataclass
class ReplicateData:
    index: int
    genotypes: GenotypeMatrix
    trait_spec: TraitSpec
    trait: TraitData
    knockoffs: KnockoffTensor
    causal: np.ndarray

    @property
    def feature_ids(self) -> List[str]:
        return self.genotypes.variant_ids


@dataclass
class ReplicateReport:
    replicate: int
    method: str
    trait: str
    target_fdrs: List[float]
    fdp: List[float] = field(default_factory=list)
    power: List[float] = field(default_factory=list)
    n_selected: List[int] = field(default_factory=list)
    causal: List[int] = field(default_factory=list)
    runtime: float = 0.0
    n_params: int = 0
    status: str = 'completed'
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.status != 'completed'

    def to_dict(self) -> dict:
        return {
            'replicate': self.replicate,
            'method': self.method,
            'trait': self.trait,
            'status': self.status,
            'error': self.error,
            'runtime': round(self.runtime, 3),
            'n_params': self.n_params,
            'causal': self.causal,
            'rows': [{'target_fdr': a, 'fdp': f, 'power': pw, 'n_selected': k}
                     for a, f, pw, k in zip(self.target_fdrs, self.fdp, self.power, self.n_selected)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ReplicateReport':
        rows = data.get('rows', [])
        return cls(replicate=int(data['replicate']), method=data['method'], trait=data['trait'],
                   target_fdrs=[r['target_fdr'] for r in rows], fdp=[r['fdp'] for r in rows],
                   power=[r['power'] for r in rows], n_selected=[r['n_selected'] for r in rows],
                   causal=list(data.get('causal', [])), runtime=float(data.get('runtime', 0.0)),
                   n_params=int(data.get('n_params', 0)),
                   status=data.get('status', 'completed'), error=data.get('error'))


@dataclass
class _CachedReplicate:
    pending: int
    lock: threading.Lock = field(default_factory=threading.Lock)
    data: Optional[ReplicateData] = None


@dataclass
class PipelineResult:
    curves: pd.DataFrame
    reports: List[ReplicateReport]

    @property
    def failures(self) -> List[ReplicateReport]:
        return [r for r in self.reports if r.failed]


class PipelineService:
    """Replicate preparation, per-method scoring and curve aggregation"""

    _cache: Dict[tuple, _CachedReplicate] = {}
    _cache_lock = threading.Lock()

    # ==================== metrics ====================

    @classmethod
    def fdr_power(cls, selected: Iterable[int], causal: Iterable[int]):
        selected, causal = set(selected), set(causal)
        if not causal:
            raise ValidationError("Power is undefined for an empty causal set")
        fdp = len(selected - causal) / max(1, len(selected))
        power = len(selected & causal) / len(causal)
        return fdp, power

    # ==================== data ====================

    @classmethod
    def prepare_replicate(cls, config: PipelineConfig, index: int) -> ReplicateData:
        """Deterministic replicate from (master_seed, index)"""
        master = config.master_seed
        G = SimulationService.simulate_genotypes(
            config.n, config.p, rho=config.rho,
            maf_sampler=log_uniform_maf(config.maf_min, config.maf_max),
            seed=run_seed(master, index, SEED_GENOTYPES))
        G = SimulationService.mac_filter(G, config.mac_min)
        clusters = SimulationService.ld_cluster(G, config.r_max)
        causal = SimulationService.choose_causal(clusters, config.n_causal,
                                                 seed=run_seed(master, index, SEED_CAUSAL))
        spec = SimulationService.trait_spec(G, config.trait, causal, config.resolved_variance_target)
        trait = SimulationService.gen_trait(G, spec, seed=run_seed(master, index, SEED_TRAIT))
        if config.trait == 'dichotomous' and trait.y.min() == trait.y.max():
            raise DataError("Simulated dichotomous trait has a single class")

        multi = any(NETWORK_METHODS.get(m, (0, '', 1, False))[2] == 'M' for m in config.methods)
        copies = config.m_knockoffs if multi else 1
        knockoffs = KnockoffService.scit_generate(G.dosages, copies, window=config.knockoff_window,
                                                  seed=run_seed(master, index, SEED_KNOCKOFFS))
        logger.info("Replicate %d: p=%d after MAC filter, %d clusters, causal=%s",
                    index, G.p, len(clusters), causal.tolist())
        return ReplicateData(index=index, genotypes=G, trait_spec=spec, trait=trait,
                             knockoffs=knockoffs, causal=causal)

    @classmethod
    def expect_replicates(cls, config: PipelineConfig, indices: Iterable[int], uses: int):
        """Register replicates that ``uses`` tasks will share; the last release evicts"""
        with cls._cache_lock:
            for index in indices:
                cls._cache[(id(config), index)] = _CachedReplicate(pending=uses)

    @classmethod
    def cached_replicate(cls, config: PipelineConfig, index: int) -> ReplicateData:
        """Shared replicate for registered keys, a fresh one otherwise

        Preparation runs under the entry's own lock, so distinct replicates
        are simulated in parallel.
        """
        with cls._cache_lock:
            entry = cls._cache.get((id(config), index))
        if entry is None:
            return cls.prepare_replicate(config, index)
        with entry.lock:
            if entry.data is None:
                entry.data = cls.prepare_replicate(config, index)
            return entry.data

    @classmethod
    def release_replicate(cls, config: PipelineConfig, index: int):
        key = (id(config), index)
        with cls._cache_lock:
            entry = cls._cache.get(key)
            if entry is None:
                return
            entry.pending -= 1
            if entry.pending <= 0:
                del cls._cache[key]

    @classmethod
    def clear_cache(cls):
        with cls._cache_lock:
            cls._cache.clear()

    # ==================== per-method scoring ====================

    @classmethod
    def network_arch(cls, config: PipelineConfig, data: ReplicateData, method: str):
        """(architecture, knockoff tensor) a network method trains on for this replicate"""
        levels, activation, copies, _ = NETWORK_METHODS[method]
        tensor = data.knockoffs if copies == 'M' else data.knockoffs.first(1)
        arch = ArchitectureConfig.for_trait(
            config.trait, p=data.genotypes.p, M=tensor.M, sigma=config.sigma, theta=config.theta,
            dense_widths=tuple(config.dense_widths), n_covariates=1, activation=activation,
            levels=levels)
        return arch, tensor

    @classmethod
    def network_stats(cls, config: PipelineConfig, data: ReplicateData, method: str) -> kf.KnockoffStats:
        ensemble = NETWORK_METHODS[method][3]
        arch, tensor = cls.network_arch(config, data, method)
        training = TrainingData(X_aug=tensor.augmented(data.genotypes.dosages), y=data.trait.y,
                                covariates=data.trait.x1[:, None], feature_ids=data.feature_ids)
        model_seed = run_seed(config.master_seed, data.index, SEED_MODEL)
        cv = HiDeMKService.cross_validate(
            arch, training, l1_grid=config.l1_grid, epoch_grid=config.epoch_grid,
            folds=config.cv_folds, draws=config.cv_draws, master_seed=model_seed,
            learning_rate=config.learning_rate,
            batch_size=config.resolved_batch_size(training.n))
        R = config.ensemble_size if ensemble else 1
        result = HiDeMKService.derandomized_importance(arch, cv.best, training, R=R,
                                                       aggregate=config.aggregate)
        return kf.knockoff_stats(result.matrix)

    @classmethod
    def baseline_stats(cls, config: PipelineConfig, data: ReplicateData, method: str) -> kf.KnockoffStats:
        result = BaselineService.baseline_pipeline(
            data.genotypes.dosages, data.knockoffs.values[:, :, 0], data.trait.x1, data.trait.y,
            config.trait, method, feature_ids=data.feature_ids, folds=config.cv_folds,
            seed=run_seed(config.master_seed, data.index, SEED_MODEL) % (2 ** 32))
        return result.stats

    @classmethod
    def method_stats(cls, config: PipelineConfig, data: ReplicateData, method: str) -> kf.KnockoffStats:
        if method in NETWORK_METHODS:
            return cls.network_stats(config, data, method)
        return cls.baseline_stats(config, data, method)

    @classmethod
    def score(cls, stats: kf.KnockoffStats, causal: Sequence[int], target_fdrs: Sequence[float]):
        """(fdp, power, n_selected) per target FDR, reading selections off the Q-values"""
        rows = []
        for alpha in target_fdrs:
            selected = np.flatnonzero(stats.q <= alpha)
            fdp, power = cls.fdr_power(selected.tolist(), causal)
            rows.append((fdp, power, int(selected.size)))
        return rows

    @classmethod
    def run_replicate(cls, config: PipelineConfig, index: int, method: str,
                      data: Optional[ReplicateData] = None, task_tracker=None) -> ReplicateReport:
        started = time.perf_counter()
        shared = data is None
        try:
            if shared:
                data = cls.cached_replicate(config, index)
            if task_tracker is not None:
                task_tracker.message = f"replicate {index} / {method}"
            stats = cls.method_stats(config, data, method)
            rows = cls.score(stats, data.causal, config.target_fdrs)
            n_params = (HiDeMKService.build(cls.network_arch(config, data, method)[0]).n_params
                        if method in NETWORK_METHODS else 0)
        finally:
            if shared:
                cls.release_replicate(config, index)
        return ReplicateReport(
            replicate=index, method=method, trait=config.trait,
            target_fdrs=list(config.target_fdrs),
            fdp=[r[0] for r in rows], power=[r[1] for r in rows], n_selected=[r[2] for r in rows],
            causal=[int(c) for c in data.causal], runtime=time.perf_counter() - started,
            n_params=n_params)

    # ==================== aggregation ====================

    @classmethod
    def aggregate_curves(cls, reports: Sequence[ReplicateReport]) -> pd.DataFrame:
        """Mean FDP and power per (method, trait, target FDR); failed replicates excluded"""
        rows = [{'method': r.method, 'trait': r.trait, 'replicate': r.replicate,
                 'target_fdr': a, 'fdp': f, 'power': pw}
                for r in reports if not r.failed
                for a, f, pw in zip(r.target_fdrs, r.fdp, r.power)]
        if not rows:
            raise DataError("No successful replicate reports to aggregate")
        frame = pd.DataFrame(rows)
        grouped = frame.groupby(['method', 'trait', 'target_fdr'], sort=True)
        curves = grouped.agg(fdr_mean=('fdp', 'mean'), fdr_sd=('fdp', 'std'),
                             power_mean=('power', 'mean'), power_sd=('power', 'std'),
                             n_replicates=('fdp', 'size')).reset_index()
        root_n = np.sqrt(curves['n_replicates'])
        curves['fdr_se'] = (curves['fdr_sd'] / root_n).fillna(0.0)
        curves['power_se'] = (curves['power_sd'] / root_n).fillna(0.0)
        return curves[CURVE_COLUMNS]

    # ==================== orchestration ====================

    @classmethod
    def run_pipeline(cls, config: PipelineConfig, repo: Optional[ArtifactRepo] = None,
                     threads: Optional[int] = None) -> PipelineResult:
        threads = threads or config.threads
        config.check_methods()
        cls.clear_cache()
        cls.expect_replicates(config, range(config.replicates), len(config.methods))
        tasks = [TaskManager.create('replicate', f"replicate {i} / {method}", cls.run_replicate,
                                    config, i, method, replicate=i, method=method)
                 for i in range(config.replicates) for method in config.methods]

        def on_done(task):
            if task.failed:
                report = ReplicateReport(replicate=task.replicate, method=task.method,
                                         trait=config.trait, target_fdrs=list(config.target_fdrs),
                                         runtime=task.runtime, status='failed',
                                         error=f"{task.error_type}: {task.error}")
            else:
                report = task.result
            task.result = report
            if repo is not None:
                repo.write_report(report)

        TaskManager.run_all(tasks, threads=threads, on_done=on_done)
        cls.clear_cache()
        reports = sorted((t.result for t in tasks), key=lambda r: (r.replicate, r.method))
        curves = cls.aggregate_curves(reports)
        failed = sum(r.failed for r in reports)
        if failed:
            logger.warning("%d of %d replicate tasks failed and are excluded from the curves",
                           failed, len(reports))
        if repo is not None:
            repo.write_frame(curves, 'curves.csv', 'curves')
        return PipelineResult(curves=curves, reports=reports)

    @classmethod
    def aggregate_reports(cls, repo: ArtifactRepo, write: bool = True) -> pd.DataFrame:
        """Rebuild the curves from the per-replicate report files of a run directory"""
        records = repo.read_reports()
        if not records:
            raise DataError(f"No replicate reports under {repo.path('reports')}")
        curves = cls.aggregate_curves([ReplicateReport.from_dict(r) for r in records])
        if write:
            repo.write_frame(curves, 'curves.csv', 'curves')
        return curves

    @classmethod
    def sweep_kernel(cls, config: PipelineConfig, sigmas: Sequence[int],
                     repo: Optional[ArtifactRepo] = None,
                     threads: Optional[int] = None) -> pd.DataFrame:
        """Repeat the pipeline for each region kernel size and summarise

        ``n_params`` is the mean size of the networks actually trained, which
        depends on the post-filter p of each replicate.
        """
        frames = []
        for sigma in sigmas:
            sub = config.replace(sigma=int(sigma))
            result = cls.run_pipeline(sub, threads=threads)
            curves = result.curves.copy()
            curves.insert(0, 'sigma', int(sigma))
            sizes = pd.DataFrame([(r.method, r.n_params) for r in result.reports if not r.failed],
                                 columns=['method', 'n_params'])
            counts = sizes.groupby('method')['n_params'].mean().round().astype(int)
            curves['n_params'] = curves['method'].map(counts)
            frames.append(curves)
        sweep = pd.concat(frames, ignore_index=True)[
            ['sigma', 'method', 'target_fdr', 'fdr_mean', 'power_mean', 'n_params', 'n_replicates']]
        if repo is not None:
            repo.write_frame(sweep, 'sweep.csv', 'sweep')
        return sweep
