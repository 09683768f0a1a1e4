#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
HiDe-MK model service

Implements:
A. Architecture assembly (fully connected, feature-wise, feature + region-wise)
B. Mini-batch Adam training with per-epoch history
C. Epoch-stability rule and cross-validated random hyperparameter search
D. De-randomised importance: aggregate of R independently seeded refits
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold

from config.settings import ModelDefaults
from services.domain import knockoff_filter as kf
from services.domain import nn_core
from services.domain.nn_core import LayerSpec, ModelState, NetworkSpec, TrainHistory
from utils.errors import ShapeError, ValidationError
from utils.logger import log_timing

logger = logging.getLogger(__name__)

STABILITY_HALF_WIDTH = 5
STABILITY_TOLERANCE = 0.01


def run_seed(master_seed: int, run_index: int, *extra: int) -> int:
    """Independent, reproducible seed for run ``run_index`` under ``master_seed``"""
    entropy = [int(master_seed), int(run_index), *[int(e) for e in extra]]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# ==================== configuration types ====================

@dataclass(frozen=True)
class ArchitectureConfig:
    p: int
    M: int
    sigma: int = ModelDefaults.SIGMA
    theta: int = ModelDefaults.THETA
    dense_widths: Tuple[int, ...] = ModelDefaults.DENSE_WIDTHS
    n_covariates: int = 1
    activation: str = 'elu'
    head: str = 'linear'
    levels: int = 2
    pad: bool = False
    first_hidden: Optional[int] = None

    def __post_init__(self):
        if self.p < 1 or self.M < 1:
            raise ValidationError("Architecture needs p >= 1 and M >= 1")
        if self.sigma < 1 or self.theta < 1:
            raise ValidationError("sigma and theta must be >= 1")
        if self.levels not in (0, 1, 2):
            raise ValidationError(f"Hierarchy levels must be 0, 1 or 2, got {self.levels}")
        if self.head not in ('linear', 'sigmoid'):
            raise ValidationError(f"Head must be linear or sigmoid, got {self.head}")
        if self.n_covariates < 0:
            raise ValidationError("Covariate count must be non-negative")

    @property
    def copies(self) -> int:
        return self.M + 1

    @classmethod
    def for_trait(cls, trait: str, **kwargs) -> 'ArchitectureConfig':
        return cls(head='sigmoid' if trait == 'dichotomous' else 'linear', **kwargs)


@dataclass(frozen=True)
class RunConfig:
    learning_rate: float = ModelDefaults.LEARNING_RATE
    batch_size: int = ModelDefaults.BATCH_SIZE
    epochs: int = 50
    l1: float = 1e-4
    master_seed: int = 0
    run_index: int = 0
    folds: int = ModelDefaults.CV_FOLDS
    draws: int = ModelDefaults.CV_DRAWS

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("Batch size must be >= 1")
        if self.folds < 2:
            raise ValidationError("Cross-validation needs at least 2 folds")
        if self.epochs < 1:
            raise ValidationError("Epoch count must be >= 1")
        if self.learning_rate < 0 or self.l1 < 0:
            raise ValidationError("Learning rate and L1 coefficient must be non-negative")

    @property
    def seed(self) -> int:
        return run_seed(self.master_seed, self.run_index)


@dataclass
class TrainingData:
    """Augmented inputs n×p×(M+1) (original at slot 0), covariates and response"""
    X_aug: np.ndarray
    y: np.ndarray
    covariates: Optional[np.ndarray] = None
    feature_ids: Optional[List[str]] = None

    def __post_init__(self):
        self.X_aug = np.asarray(self.X_aug, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X_aug.ndim != 3:
            raise ShapeError(f"Augmented input must be n×p×(M+1), got shape {self.X_aug.shape}")
        if self.X_aug.shape[0] != self.y.size:
            raise ShapeError(f"{self.X_aug.shape[0]} samples but {self.y.size} responses")
        if self.covariates is not None:
            self.covariates = np.asarray(self.covariates, dtype=np.float64).reshape(self.y.size, -1)
        if self.feature_ids is None:
            self.feature_ids = [f"v{j + 1}" for j in range(self.X_aug.shape[1])]

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X_aug.shape[1]

    @property
    def M(self) -> int:
        return self.X_aug.shape[2] - 1

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    def subset(self, rows) -> 'TrainingData':
        rows = np.asarray(rows)
        return TrainingData(
            X_aug=self.X_aug[rows],
            y=self.y[rows],
            covariates=None if self.covariates is None else self.covariates[rows],
            feature_ids=self.feature_ids,
        )

    def split(self, fraction: float, seed: int) -> Tuple['TrainingData', 'TrainingData']:
        if not 0.0 < fraction < 1.0:
            raise ValidationError(f"Validation fraction must lie in (0, 1), got {fraction}")
        order = np.random.default_rng(seed).permutation(self.n)
        cut = self.n - max(1, int(round(fraction * self.n)))
        return self.subset(order[:cut]), self.subset(order[cut:])


@dataclass
class InputScaler:
    """Per-feature centring and scaling taken from the original copy"""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X_aug) -> 'InputScaler':
        original = np.asarray(X_aug)[:, :, 0]
        sd = original.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(mean=original.mean(axis=0), scale=sd)

    def transform(self, X_aug) -> np.ndarray:
        return (np.asarray(X_aug) - self.mean[None, :, None]) / self.scale[None, :, None]


@dataclass
class BuiltNetwork:
    spec: NetworkSpec
    n_params: int
    n_activations: int

    @property
    def layers(self) -> Tuple[LayerSpec, ...]:
        return self.spec.layers

    def table(self) -> pd.DataFrame:
        rows = [{
            'layer': layer.name or layer.kind,
            'kind': layer.kind,
            'input_width': layer.input_width,
            'output_width': layer.output_width,
            'weights': layer.n_params,
            'activations': layer.n_activations,
        } for layer in self.spec.layers]
        return pd.DataFrame(rows)


@dataclass
class TrainedModel:
    arch: ArchitectureConfig
    run: RunConfig
    spec: NetworkSpec
    state: ModelState
    history: TrainHistory
    scaler: InputScaler


@dataclass
class CVResult:
    best: RunConfig
    best_score: float
    draws: pd.DataFrame


@dataclass
class EnsembleResult:
    runs: List[np.ndarray]
    matrix: kf.ImportanceMatrix
    w_correlation: np.ndarray
    seeds: List[int] = field(default_factory=list)
    aggregate: str = 'median'

    @property
    def R(self) -> int:
        return len(self.runs)

    def mean_pairwise_correlation(self) -> float:
        if self.R < 2:
            return 1.0
        upper = self.w_correlation[np.triu_indices(self.R, k=1)]
        return float(np.mean(upper))


def _metric_name(head: str) -> str:
    return 'auc' if head == 'sigmoid' else 'mse'


def _w_vector(T: np.ndarray) -> np.ndarray:
    if T.shape[1] - 1 == 1:
        return kf.w_single(T[:, 0], T[:, 1])
    return kf.kappa_tau_matrix(T)[2]


def correlation_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Pearson correlations between vectors; constant vectors correlate 0 with others"""
    stack = np.vstack([np.asarray(v, dtype=np.float64) for v in vectors])
    with np.errstate(invalid='ignore', divide='ignore'):
        corr = np.corrcoef(stack) if stack.shape[0] > 1 else np.ones((1, 1))
    corr = np.nan_to_num(np.atleast_2d(corr), nan=0.0)
    np.fill_diagonal(corr, 1.0)
    return corr


class HiDeMKService:
    """Hierarchical multiple-knockoff network: build, train, select epochs, ensemble"""

    # ==================== architecture ====================

    @classmethod
    def build(cls, arch: ArchitectureConfig) -> BuiltNetwork:
        """Layer list plus exact parameter and activation counts

        levels=2: feature-wise LC (group M+1) -> region-wise LC (group sigma,
        theta channels) -> flatten -> dense stack -> covariate merge -> output.
        levels=1 drops the region-wise layer; levels=0 is fully connected.
        ``first_hidden`` adds a dense layer of that width after the
        feature-wise layer (levels 1) or as the first layer (levels 0).
        """
        act = arch.activation
        width = arch.p * arch.copies
        layers: List[LayerSpec] = []

        def push(layer: LayerSpec):
            nonlocal width
            layers.append(layer)
            width = layer.output_width

        if arch.levels >= 1:
            push(LayerSpec('locally_connected', width, group_size=arch.copies, stride=arch.copies,
                           channels=1, activation=act, name='feature_wise'))
        if arch.levels == 2:
            push(LayerSpec('locally_connected', width, group_size=arch.sigma, stride=arch.sigma,
                           channels=arch.theta, activation=act, pad=arch.pad, name='region_wise'))
        push(LayerSpec('flatten', width, name='flatten'))
        if arch.first_hidden and arch.levels < 2:
            push(LayerSpec('dense', width, channels=arch.first_hidden, activation=act,
                           name='first_hidden'))
        for k, units in enumerate(arch.dense_widths):
            push(LayerSpec('dense', width, channels=int(units), activation=act, name=f'dense_{k + 1}'))
        push(LayerSpec('covariate_merge', width, n_covariates=arch.n_covariates, name='covariates'))
        push(LayerSpec('output', width, channels=1, activation=arch.head, name='output'))

        spec = NetworkSpec(layers=tuple(layers), p=arch.p, copies=arch.copies,
                           n_covariates=arch.n_covariates)
        return BuiltNetwork(spec=spec, n_params=spec.n_params, n_activations=spec.n_activations)

    @classmethod
    def with_l1(cls, spec: NetworkSpec, l1: float) -> NetworkSpec:
        """L1 on the first parameterised layer only (feature-wise LC when levels >= 1)"""
        first = next(k for k, layer in enumerate(spec.layers) if layer.has_params)
        layers = tuple(replace(layer, l1=l1) if k == first else layer
                       for k, layer in enumerate(spec.layers))
        return replace(spec, layers=layers)

    @classmethod
    def hierarchy_counts(cls, p: int, M: int, sigma: int = ModelDefaults.SIGMA,
                         theta: int = ModelDefaults.THETA, first_hidden: Optional[int] = None,
                         dense_widths: Sequence[int] = (8, 8),
                         n_covariates: int = 0) -> pd.DataFrame:
        """Per-layer weight/activation counts for 0-, 1- and 2-level networks"""
        first_hidden = first_hidden or p * (M + 1)
        frames = []
        for levels in (0, 1, 2):
            arch = ArchitectureConfig(p=p, M=M, sigma=sigma, theta=theta,
                                      dense_widths=tuple(dense_widths), n_covariates=n_covariates,
                                      levels=levels, first_hidden=first_hidden)
            table = cls.build(arch).table()
            table.insert(0, 'levels', levels)
            frames.append(table)
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def epoch_timings(cls, p: int, M: int, n: int, sigma: int = ModelDefaults.SIGMA,
                      theta: int = ModelDefaults.THETA, first_hidden: Optional[int] = None,
                      dense_widths: Sequence[int] = (8, 8), batch_size: Optional[int] = None,
                      repeats: int = 3, seed: int = 0) -> pd.DataFrame:
        """Seconds per training epoch for 0-, 1- and 2-level networks on random dosages"""
        rng = np.random.default_rng(seed)
        data = TrainingData(X_aug=rng.binomial(2, 0.3, size=(n, p, M + 1)).astype(np.float64),
                            y=rng.standard_normal(n))
        run = RunConfig(batch_size=batch_size or max(1, min(ModelDefaults.BATCH_SIZE, n // 4)),
                        epochs=1, master_seed=seed)
        rows = []
        for levels in (0, 1, 2):
            arch = ArchitectureConfig(p=p, M=M, sigma=sigma, theta=theta, n_covariates=0,
                                      dense_widths=tuple(dense_widths), levels=levels,
                                      first_hidden=first_hidden or p * (M + 1))
            seconds = cls.time_epoch(arch, run, data, repeats=repeats)
            rows.append({'levels': levels, 'n': n, 'batch_size': run.batch_size,
                         'epoch_seconds': seconds})
            logger.info("levels=%d: %.4fs per epoch (n=%d, p=%d, M=%d)", levels, seconds, n, p, M)
        return pd.DataFrame(rows)

    # ==================== training ====================

    @classmethod
    def _evaluate(cls, spec, state, data: TrainingData, X_scaled, loss_kind):
        y_hat = nn_core.forward(spec, state, X_scaled, data.covariates)
        value = nn_core.loss(loss_kind, data.y, y_hat)
        metric = nn_core.auc_from_labels(data.y, y_hat) if loss_kind == 'bce' else value
        return value, metric

    @classmethod
    def train(cls, arch: ArchitectureConfig, run: RunConfig, data: TrainingData,
              validation: Optional[TrainingData] = None,
              epoch_callback: Optional[Callable[[int, 'TrainedModel'], None]] = None,
              seed: Optional[int] = None) -> TrainedModel:
        """Train for ``run.epochs`` epochs; without a validation set the train data is scored"""
        if data.p != arch.p or data.M != arch.M:
            raise ShapeError(f"Data carries p={data.p}, M={data.M}; architecture expects "
                             f"p={arch.p}, M={arch.M}")
        if data.n_covariates != arch.n_covariates:
            raise ShapeError(f"Data carries {data.n_covariates} covariates, "
                             f"architecture expects {arch.n_covariates}")
        spec = cls.with_l1(cls.build(arch).spec, run.l1)
        loss_kind = nn_core.head_loss_kind(spec)
        seed = run.seed if seed is None else int(seed)
        state = nn_core.init_state(spec, seed)
        rng = np.random.default_rng(run_seed(seed, 1))

        scaler = InputScaler.fit(data.X_aug)
        X_train = scaler.transform(data.X_aug)
        X_val = scaler.transform(validation.X_aug) if validation is not None else X_train
        val_data = validation if validation is not None else data
        history = TrainHistory(metric=_metric_name(arch.head))
        model = TrainedModel(arch=arch, run=run, spec=spec, state=state, history=history, scaler=scaler)

        n = data.n
        batch = min(run.batch_size, n)
        cov = data.covariates
        for epoch in range(run.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                result = nn_core.backprop(spec, state, X_train[idx],
                                          None if cov is None else cov[idx],
                                          data.y[idx], loss_kind)
                state = nn_core.adam_step(state, result.grads, run.learning_rate)
            train_loss, _ = cls._evaluate(spec, state, data, X_train, loss_kind)
            val_loss, val_metric = cls._evaluate(spec, state, val_data, X_val, loss_kind)
            history.append(train_loss, val_loss, val_metric)
            model.state = state
            if epoch_callback is not None:
                epoch_callback(epoch, model)

        logger.debug("Trained %d epochs (seed=%d, l1=%g): val_loss=%.5f",
                     run.epochs, seed, run.l1, history.val_loss[-1])
        return model

    @classmethod
    def importance(cls, model: TrainedModel, data: TrainingData) -> kf.ImportanceMatrix:
        X = model.scaler.transform(data.X_aug)
        grads = nn_core.input_gradients(model.spec, model.state, X, data.covariates)
        return kf.importance_matrix(grads, data.feature_ids)

    @classmethod
    def time_epoch(cls, arch: ArchitectureConfig, run: RunConfig, data: TrainingData,
                   repeats: int = 1) -> float:
        """Wall-clock seconds for one training epoch (best of ``repeats``)"""
        best = float('inf')
        one_epoch = replace(run, epochs=1)
        for _ in range(max(1, repeats)):
            started = time.perf_counter()
            cls.train(arch, one_epoch, data)
            best = min(best, time.perf_counter() - started)
        return best

    # ==================== epoch selection ====================

    @classmethod
    def optimal_epoch(cls, history: TrainHistory, half_width: int = STABILITY_HALF_WIDTH,
                      tolerance: float = STABILITY_TOLERANCE) -> int:
        """Best-metric epoch whose ±half_width window stays within tolerance of the minimum loss"""
        if len(history) == 0:
            raise ValidationError("Cannot choose an epoch from an empty history")
        losses = np.asarray(history.val_loss)
        metric = np.asarray(history.val_metric)
        best_loss = losses.min()
        if best_loss == 0:
            close = losses == 0
        else:
            close = np.abs(losses - best_loss) / abs(best_loss) < tolerance

        K = losses.size
        stable = np.array([close[max(0, k - half_width):min(K, k + half_width + 1)].all()
                           for k in range(K)])
        if not stable.any():
            return int(np.argmin(losses))
        candidates = np.flatnonzero(stable)
        scores = metric[candidates] if history.higher_is_better else -metric[candidates]
        return int(candidates[np.argmax(scores)])

    # ==================== cross-validation ====================

    @classmethod
    def _folds(cls, data: TrainingData, folds: int, seed: int, head: str):
        if head == 'sigmoid':
            splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
            return list(splitter.split(np.zeros(data.n), data.y.astype(int)))
        splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
        return list(splitter.split(np.zeros(data.n)))

    @classmethod
    def search_draws(cls, l1_grid: Sequence[float], epoch_grid: Sequence[int], draws: int,
                     master_seed: int) -> List[Tuple[float, int]]:
        space = list(itertools.product(l1_grid, epoch_grid))
        if not space:
            raise ValidationError("Hyperparameter search space is empty")
        rng = np.random.default_rng(run_seed(master_seed, 0, 0xC5))
        picks = rng.choice(len(space), size=min(draws, len(space)), replace=False)
        return [(float(space[i][0]), int(space[i][1])) for i in picks]

    @classmethod
    @log_timing(threshold_ms=60_000)
    def cross_validate(cls, arch: ArchitectureConfig, data: TrainingData,
                       l1_grid: Sequence[float] = ModelDefaults.L1_GRID,
                       epoch_grid: Sequence[int] = ModelDefaults.EPOCH_GRID,
                       folds: int = ModelDefaults.CV_FOLDS, draws: int = ModelDefaults.CV_DRAWS,
                       master_seed: int = 0, learning_rate: float = ModelDefaults.LEARNING_RATE,
                       batch_size: int = ModelDefaults.BATCH_SIZE, threads: int = 1) -> CVResult:
        """Random search over (l1, max epochs); fold histories are averaged before epoch selection"""
        combos = cls.search_draws(l1_grid, epoch_grid, draws, master_seed)
        splits = cls._folds(data, folds, run_seed(master_seed, 0, 0xF0) % (2 ** 32), arch.head)

        def fit_fold(job):
            d, f = job
            l1, epochs = combos[d]
            train_idx, val_idx = splits[f]
            run = RunConfig(learning_rate=learning_rate, batch_size=batch_size, epochs=epochs,
                            l1=l1, master_seed=master_seed, run_index=d * folds + f, folds=folds)
            model = cls.train(arch, run, data.subset(train_idx), validation=data.subset(val_idx),
                              seed=run_seed(master_seed, d, f, 0xCF))
            return job, model.history

        jobs = [(d, f) for d in range(len(combos)) for f in range(folds)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = dict(pool.map(fit_fold, jobs))
        else:
            results = dict(map(fit_fold, jobs))

        rows = []
        for d, (l1, epochs) in enumerate(combos):
            histories = [results[(d, f)] for f in range(folds)]
            mean_history = TrainHistory(metric=histories[0].metric)
            for e in range(epochs):
                mean_history.append(
                    float(np.mean([h.train_loss[e] for h in histories])),
                    float(np.mean([h.val_loss[e] for h in histories])),
                    float(np.mean([h.val_metric[e] for h in histories])),
                )
            best_epoch = cls.optimal_epoch(mean_history)
            rows.append({'draw': d, 'l1': l1, 'max_epochs': epochs, 'optimal_epoch': best_epoch,
                         'score': mean_history.val_metric[best_epoch]})

        table = pd.DataFrame(rows)
        scores = table['score'].to_numpy()
        winner = int(np.argmax(scores) if arch.head == 'sigmoid' else np.argmin(scores))
        chosen = table.iloc[winner]
        best = RunConfig(learning_rate=learning_rate, batch_size=batch_size,
                         epochs=int(chosen['optimal_epoch']) + 1, l1=float(chosen['l1']),
                         master_seed=master_seed, folds=folds, draws=draws)
        logger.info("CV picked l1=%g epochs=%d (score %.4f over %d draws)",
                    best.l1, best.epochs, float(chosen['score']), len(combos))
        return CVResult(best=best, best_score=float(chosen['score']), draws=table)

    # ==================== de-randomisation ====================

    @classmethod
    def ensemble_matrices(cls, matrices: Sequence[np.ndarray], aggregate: str = 'median') -> np.ndarray:
        if not matrices:
            raise ValidationError("Ensemble needs at least one run")
        stack = np.stack([np.asarray(m, dtype=np.float64) for m in matrices])
        if aggregate == 'median':
            return np.median(stack, axis=0)
        if aggregate == 'mean':
            return stack.mean(axis=0)
        raise ValidationError(f"Unknown aggregate: {aggregate}")

    @classmethod
    def derandomized_importance(cls, arch: ArchitectureConfig, run: RunConfig, data: TrainingData,
                                R: int = ModelDefaults.ENSEMBLE_SIZE,
                                seeds: Optional[Sequence[int]] = None,
                                aggregate: str = 'median', threads: int = 1) -> EnsembleResult:
        """Refit on the full data R times and aggregate the importance matrices"""
        if R < 1:
            raise ValidationError("Ensemble size must be >= 1")
        seeds = list(seeds) if seeds is not None else [run_seed(run.master_seed, r) for r in range(R)]
        if len(seeds) != R:
            raise ValidationError(f"{len(seeds)} seeds given for {R} runs")

        def one_run(seed):
            model = cls.train(arch, run, data, seed=seed)
            return cls.importance(model, data).T

        if threads > 1 and R > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                runs = list(pool.map(one_run, seeds))
        else:
            runs = [one_run(seed) for seed in seeds]

        aggregated = cls.ensemble_matrices(runs, aggregate)
        w_corr = correlation_matrix([_w_vector(T) for T in runs])
        return EnsembleResult(runs=runs,
                              matrix=kf.ImportanceMatrix(T=aggregated, feature_ids=data.feature_ids),
                              w_correlation=w_corr, seeds=[int(s) for s in seeds],
                              aggregate=aggregate)

    @classmethod
    def epoch_w_stability(cls, arch: ArchitectureConfig, run: RunConfig, data: TrainingData,
                          R: int = 1, aggregate: str = 'median') -> np.ndarray:
        """Correlation of W between consecutive epochs, for one run (R=1) or an ensemble"""
        per_run = []
        for r in range(R):
            snapshots: List[np.ndarray] = []
            cls.train(arch, run, data, seed=run_seed(run.master_seed, r),
                      epoch_callback=lambda _e, model: snapshots.append(cls.importance(model, data).T))
            per_run.append(snapshots)
        w_by_epoch = [_w_vector(cls.ensemble_matrices([snaps[e] for snaps in per_run], aggregate))
                      for e in range(run.epochs)]
        return np.array([correlation_matrix([w_by_epoch[e - 1], w_by_epoch[e]])[0, 1]
                         for e in range(1, len(w_by_epoch))])
