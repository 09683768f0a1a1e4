#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Multiple knockoff generation

Sequential conditional sampling: for each feature in position order, fit a
ridge-stabilised linear model of x_j on the nearby originals plus the
knockoffs already drawn for them, then draw every knockoff copy as
fitted + a freshly permuted residual vector.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import linalg

from config.settings import ModelDefaults
from utils.errors import NumericalError, ShapeError, ValidationError, ensure_finite

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-6


@dataclass
class ConditionalFit:
    coefficients: np.ndarray
    intercept: float
    fitted: np.ndarray
    residuals: np.ndarray
    columns: List[str]
    constant: bool = False


@dataclass
class KnockoffTensor:
    """n×p×M knockoff values"""
    values: np.ndarray
    M: int
    seed: int
    window: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != self.M:
            raise ShapeError(f"Knockoff tensor shape {self.values.shape} does not carry M={self.M} copies")
        if self.M < 1:
            raise ValidationError("Knockoff tensor needs M >= 1")
        ensure_finite(self.values, "knockoff values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def augmented(self, X) -> np.ndarray:
        """n×p×(M+1) with the original at slot 0"""
        X = np.asarray(X, dtype=np.float64)
        if X.shape != self.values.shape[:2]:
            raise ShapeError(f"Original shape {X.shape} != knockoff shape {self.values.shape[:2]}")
        return np.concatenate([X[:, :, None], self.values], axis=2)

    def first(self, count: int) -> 'KnockoffTensor':
        if not 1 <= count <= self.M:
            raise ValidationError(f"Cannot take {count} of {self.M} knockoff copies")
        return KnockoffTensor(values=self.values[:, :, :count], M=count,
                              seed=self.seed, window=self.window)


@dataclass
class ExchangeabilityReport:
    """Per-feature (p×M) gaps between originals and knockoffs"""
    mean_gap: np.ndarray
    var_gap: np.ndarray
    orig_ko_corr: np.ndarray
    neighbor_gap: np.ndarray

    def fraction_within(self, tolerance: float, field_name: str = 'mean_gap') -> float:
        """Share of features whose worst copy stays within ``tolerance``"""
        gaps = getattr(self, field_name)
        return float(np.mean(gaps.max(axis=1) < tolerance))

    def summary(self) -> dict:
        return {
            'max_mean_gap': float(self.mean_gap.max()),
            'max_var_gap': float(self.var_gap.max()),
            'max_abs_orig_ko_corr': float(np.abs(self.orig_ko_corr).max()),
            'max_neighbor_gap': float(self.neighbor_gap.max()),
        }


def _column_corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        return 0.0
    return float((a @ b) / denom)


class KnockoffService:
    """Sequential conditional knockoff sampler and its diagnostics"""

    @classmethod
    def conditioning_set(cls, X, knockoffs, j: int, window: int):
        """Nearby originals (excluding j) and the knockoffs drawn for earlier nearby features"""
        n, p = X.shape
        lo, hi = max(0, j - window), min(p, j + window + 1)
        neighbors = [k for k in range(lo, hi) if k != j]
        blocks = [X[:, neighbors]]
        names = [f"x{k}" for k in neighbors]
        if knockoffs is not None:
            earlier = [k for k in neighbors if k < j]
            if earlier:
                M = knockoffs.shape[2]
                blocks.append(knockoffs[:, earlier, :].reshape(n, -1))
                names.extend(f"x{k}@k{m + 1}" for k in earlier for m in range(M))
        return np.hstack(blocks), names

    @classmethod
    def conditional_fit(cls, X, knockoffs, j: int,
                        window: int = ModelDefaults.KNOCKOFF_WINDOW) -> ConditionalFit:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"Feature matrix must be n×p, got shape {X.shape}")
        if not 0 <= j < X.shape[1]:
            raise ValidationError(f"Feature index {j} outside 0..{X.shape[1] - 1}")
        target = X[:, j]
        center = float(target.mean())
        if np.ptp(target) == 0:
            return ConditionalFit(coefficients=np.zeros(0), intercept=center,
                                  fitted=target.copy(), residuals=np.zeros_like(target),
                                  columns=[], constant=True)

        Z, names = cls.conditioning_set(X, knockoffs, j, window)
        keep = np.ptp(Z, axis=0) > 0 if Z.shape[1] else np.zeros(0, dtype=bool)
        Z = Z[:, keep]
        names = [name for name, k in zip(names, keep) if k]
        if Z.shape[1] == 0:
            fitted = np.full_like(target, center)
            return ConditionalFit(coefficients=np.zeros(0), intercept=center, fitted=fitted,
                                  residuals=target - fitted, columns=[])

        Zc = Z - Z.mean(axis=0)
        gram = Zc.T @ Zc
        lam = RIDGE_SCALE * np.trace(gram) / gram.shape[0]
        gram[np.diag_indices_from(gram)] += lam
        try:
            coef = linalg.solve(gram, Zc.T @ (target - center), assume_a='pos')
        except linalg.LinAlgError as e:
            raise NumericalError(f"Conditional fit for feature {j} is singular: {e}")
        fitted = center + Zc @ coef
        ensure_finite(fitted, f"conditional fit of feature {j}")
        intercept = center - float(Z.mean(axis=0) @ coef)
        return ConditionalFit(coefficients=coef, intercept=intercept, fitted=fitted,
                              residuals=target - fitted, columns=names)

    @classmethod
    def scit_generate(cls, X, M: int = ModelDefaults.KNOCKOFFS,
                      window: int = ModelDefaults.KNOCKOFF_WINDOW,
                      seed: int = 0) -> KnockoffTensor:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"Feature matrix must be n×p, got shape {X.shape}")
        if M < 1:
            raise ValidationError(f"Knockoff count must be >= 1, got {M}")
        if window < 1:
            raise ValidationError(f"Conditioning window must be >= 1, got {window}")
        ensure_finite(X, "feature matrix")
        n, p = X.shape
        if n <= window * (M + 1):
            logger.warning("n=%d is not larger than window*(M+1)=%d; conditional fits will lean on the ridge",
                           n, window * (M + 1))

        rng = np.random.default_rng(seed)
        knockoffs = np.zeros((n, p, M))
        for j in range(p):
            fit = cls.conditional_fit(X, knockoffs, j, window)
            for m in range(M):
                knockoffs[:, j, m] = fit.fitted + fit.residuals[rng.permutation(n)]
        logger.debug("Generated %d knockoff copies for %d features (window=%d)", M, p, window)
        return KnockoffTensor(values=knockoffs, M=M, seed=int(seed), window=int(window))

    @classmethod
    def diagnostics(cls, X, K) -> ExchangeabilityReport:
        X = np.asarray(X, dtype=np.float64)
        values = K.values if isinstance(K, KnockoffTensor) else np.asarray(K, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.shape[:2] != X.shape:
            raise ShapeError(f"Knockoff shape {values.shape[:2]} != feature shape {X.shape}")
        n, p = X.shape
        M = values.shape[2]

        mean_gap = np.abs(values.mean(axis=0) - X.mean(axis=0)[:, None])
        var_gap = np.abs(values.var(axis=0) - X.var(axis=0)[:, None])
        orig_ko_corr = np.zeros((p, M))
        neighbor_gap = np.zeros((p, M))
        for j in range(p):
            nb = j + 1 if j + 1 < p else j - 1
            reference = _column_corr(X[:, j], X[:, nb]) if nb >= 0 else 0.0
            for m in range(M):
                orig_ko_corr[j, m] = _column_corr(X[:, j], values[:, j, m])
                if nb >= 0:
                    neighbor_gap[j, m] = abs(_column_corr(values[:, j, m], X[:, nb]) - reference)
        report = ExchangeabilityReport(mean_gap=mean_gap, var_gap=var_gap,
                                       orig_ko_corr=orig_ko_corr, neighbor_gap=neighbor_gap)
        for name in ('mean_gap', 'var_gap', 'orig_ko_corr', 'neighbor_gap'):
            ensure_finite(getattr(report, name), name)
        return report


def augment(X, tensor: Optional[KnockoffTensor]) -> np.ndarray:
    if tensor is None:
        return np.asarray(X, dtype=np.float64)[:, :, None]
    return tensor.augmented(X)
