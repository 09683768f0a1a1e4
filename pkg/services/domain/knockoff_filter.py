#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Knockoff filter domain functions

Importance matrix from gradient tensors, κ/τ/W statistics, single and
multiple knockoff thresholds and Q-values. Everything here is a pure
function of its inputs.

Conventions:
  - argmax ties go to the original (index 0), then to the lowest knockoff;
  - selection is τ_j ≥ t̂ (or W_j ≥ t̂), so t̂ itself is selected;
  - candidate thresholds are the distinct positive τ (or |W|) values;
  - empty denominators are guarded with max(1, ·).
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from utils.errors import ShapeError, ValidationError, ensure_finite


@dataclass
class ImportanceMatrix:
    """p×(M+1) absolute importances; column 0 is the original"""
    T: np.ndarray
    feature_ids: List[str]

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.T.ndim != 2 or self.T.shape[0] != len(self.feature_ids):
            raise ShapeError(f"Importance matrix shape {self.T.shape} does not match "
                             f"{len(self.feature_ids)} feature ids")
        ensure_finite(self.T, "importance scores")
        if np.any(self.T < 0):
            raise ValidationError("Importance scores must be non-negative")

    @property
    def n_knockoffs(self) -> int:
        return self.T.shape[1] - 1


@dataclass
class KnockoffStats:
    feature_ids: List[str]
    kappa: np.ndarray
    tau: np.ndarray
    W: np.ndarray
    q: np.ndarray
    M: int


@dataclass
class SelectionResult:
    alpha: float
    threshold: Optional[float]
    selected: List[str]
    M: int


# ==================== importance ====================

def importance_matrix(grad_tensor, feature_ids: Optional[Sequence[str]] = None) -> ImportanceMatrix:
    """T[j, m] = |mean_i grad[i, j, m]|  (mean first, then absolute value)"""
    grad = np.asarray(grad_tensor, dtype=np.float64)
    if grad.ndim != 3:
        raise ShapeError(f"Gradient tensor must be n×p×(M+1), got shape {grad.shape}")
    ensure_finite(grad, "gradient tensor")
    T = np.abs(grad.mean(axis=0))
    ids = list(feature_ids) if feature_ids is not None else [f"v{j + 1}" for j in range(T.shape[0])]
    return ImportanceMatrix(T=T, feature_ids=ids)


# ==================== per-feature statistics ====================

def _check_row(row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size - 1 < 2:
        raise ValidationError(f"Multiple-knockoff statistics need M >= 2, got M = {row.size - 1}")
    return row


def kappa_tau(row):
    """κ = argmax index, τ = max − median of the other M scores"""
    row = _check_row(row)
    kappa = int(np.argmax(row))
    rest = np.delete(row, kappa)
    return kappa, float(row[kappa] - np.median(rest))


def w_multiple(row) -> float:
    row = _check_row(row)
    knockoffs = row[1:]
    if row[0] >= knockoffs.max():
        return float(row[0] - np.median(knockoffs))
    return 0.0


def w_single(t0, t1):
    """W = T0 − T1, elementwise over arrays"""
    W = np.subtract(t0, t1, dtype=np.float64)
    return float(W) if np.ndim(W) == 0 else W


def kappa_tau_matrix(T):
    """Vectorised κ, τ, W over the rows of T"""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[1] - 1 < 2:
        raise ValidationError("Multiple-knockoff statistics need a p×(M+1) matrix with M >= 2")
    kappa = np.argmax(T, axis=1)
    top = T[np.arange(T.shape[0]), kappa]
    mask = np.ones_like(T, dtype=bool)
    mask[np.arange(T.shape[0]), kappa] = False
    rest = T[mask].reshape(T.shape[0], T.shape[1] - 1)
    tau = top - np.median(rest, axis=1)
    W = np.where(kappa == 0, tau, 0.0)
    return kappa.astype(int), tau, W


# ==================== thresholds ====================

def _multiple_ratio(kappa, tau, M, t):
    """(1/M + (1/M)#{κ≥1, τ≥t}) / max(1, #{κ=0, τ≥t}) at each t"""
    t = np.atleast_1d(t)
    ko_tau = np.sort(tau[kappa != 0])
    orig_tau = np.sort(tau[kappa == 0])
    n_ko = ko_tau.size - np.searchsorted(ko_tau, t, side='left')
    n_orig = orig_tau.size - np.searchsorted(orig_tau, t, side='left')
    return (1.0 + n_ko) / M / np.maximum(1, n_orig)


def _aligned(kappa, tau):
    kappa = np.asarray(kappa).astype(int).ravel()
    tau = np.asarray(tau, dtype=np.float64).ravel()
    if kappa.size == 0:
        raise ValidationError("Knockoff filter needs at least one feature")
    if kappa.shape != tau.shape:
        raise ShapeError("κ and τ vectors are not aligned")
    return kappa, tau


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"Target FDR must lie in (0, 1), got {alpha}")


def threshold_multiple(kappa, tau, alpha: float, M: int) -> Optional[float]:
    kappa, tau = _aligned(kappa, tau)
    _check_alpha(alpha)
    candidates = np.unique(tau[tau > 0])
    if candidates.size == 0:
        return None
    ok = _multiple_ratio(kappa, tau, M, candidates) <= alpha
    if not ok.any():
        return None
    return float(candidates[np.argmax(ok)])


def select_multiple(kappa, tau, alpha: float, M: int) -> np.ndarray:
    """Indices with κ=0 and τ ≥ t̂"""
    kappa, tau = _aligned(kappa, tau)
    t_hat = threshold_multiple(kappa, tau, alpha, M)
    if t_hat is None:
        return np.array([], dtype=int)
    return np.flatnonzero((kappa == 0) & (tau >= t_hat))


def q_values(kappa, tau, M: int) -> np.ndarray:
    kappa, tau = _aligned(kappa, tau)
    candidates = np.unique(tau[tau > 0])
    q = np.ones(tau.size)
    if candidates.size == 0:
        return q
    ratio = _multiple_ratio(kappa, tau, M, candidates)
    # running min over candidates t ≤ τ_j
    best = np.minimum.accumulate(ratio)
    eligible = (kappa == 0) & (tau > 0)
    pos = np.searchsorted(candidates, tau[eligible], side='right') - 1
    q[eligible] = np.minimum(best[pos], 1.0)
    return q


def _single_ratio(W, t):
    t = np.atleast_1d(t)
    W_sorted = np.sort(W)
    n_neg = np.searchsorted(W_sorted, -t, side='right')
    n_pos = W_sorted.size - np.searchsorted(W_sorted, t, side='left')
    return (1.0 + n_neg) / np.maximum(1, n_pos)


def _check_w(W):
    W = np.asarray(W, dtype=np.float64).ravel()
    if W.size == 0:
        raise ValidationError("Knockoff filter needs at least one feature")
    return W


def threshold_single(W, alpha: float) -> Optional[float]:
    """t̂ = min{t > 0 : (1 + #{W ≤ −t}) / #{W ≥ t} ≤ α}"""
    W = _check_w(W)
    _check_alpha(alpha)
    candidates = np.unique(np.abs(W[W != 0]))
    if candidates.size == 0:
        return None
    ok = _single_ratio(W, candidates) <= alpha
    if not ok.any():
        return None
    return float(candidates[np.argmax(ok)])


def select_single(W, alpha: float) -> np.ndarray:
    W = _check_w(W)
    t_hat = threshold_single(W, alpha)
    if t_hat is None:
        return np.array([], dtype=int)
    return np.flatnonzero(W >= t_hat)


def q_values_single(W) -> np.ndarray:
    """Smallest α at which each W_j > 0 would be selected; 1 otherwise"""
    W = _check_w(W)
    candidates = np.unique(np.abs(W[W != 0]))
    q = np.ones(W.size)
    if candidates.size == 0:
        return q
    best = np.minimum.accumulate(_single_ratio(W, candidates))
    eligible = W > 0
    pos = np.searchsorted(candidates, W[eligible], side='right') - 1
    q[eligible] = np.minimum(best[pos], 1.0)
    return q


# ==================== assembly ====================

def knockoff_stats(importance: ImportanceMatrix) -> KnockoffStats:
    """κ, τ, W, q for every feature; M = 1 falls back to W = T0 − T1"""
    T = importance.T
    M = importance.n_knockoffs
    if M < 1:
        raise ValidationError("Importance matrix has no knockoff columns")
    if M == 1:
        W = w_single(T[:, 0], T[:, 1])
        kappa = np.where(T[:, 0] >= T[:, 1], 0, 1)
        tau = np.abs(W)
        q = q_values_single(W)
    else:
        kappa, tau, W = kappa_tau_matrix(T)
        q = q_values(kappa, tau, M)
    return KnockoffStats(feature_ids=list(importance.feature_ids), kappa=kappa, tau=tau,
                         W=W, q=q, M=M)


def select(stats: KnockoffStats, alpha: float) -> SelectionResult:
    _check_alpha(alpha)
    if stats.M == 1:
        t_hat = threshold_single(stats.W, alpha)
    else:
        t_hat = threshold_multiple(stats.kappa, stats.tau, alpha, stats.M)
    chosen = np.flatnonzero(stats.q <= alpha)
    return SelectionResult(alpha=alpha, threshold=t_hat,
                           selected=[stats.feature_ids[j] for j in chosen], M=stats.M)
