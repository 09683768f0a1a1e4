#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Linear comparator methods

Marginal Wald tests, lasso by coordinate descent and ridge regression, each
wrapped in a single-knockoff selection pipeline.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import norm
from scipy.stats import t as student_t
from sklearn.model_selection import KFold, StratifiedKFold

from services.domain import knockoff_filter as kf
from utils.errors import ConvergenceError, NumericalError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

Z_CAP = 37.0
NEWTON_MAX_ITER = 25
NEWTON_TOL = 1e-8
PATH_LENGTH = 100
PATH_DECADES = 3
CD_TOL = 1e-9
CD_MAX_SWEEPS = 10_000
IRLS_MAX_ITER = 100
WEIGHT_FLOOR = 1e-5

BASELINE_METHODS = ('marginal', 'lasso', 'ridge')


@dataclass
class GlmFit:
    """Slope estimates of single-predictor fits (one entry per column)"""
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    @property
    def importance(self) -> np.ndarray:
        return np.abs(self.z)


@dataclass
class RegularizedFit:
    coef: np.ndarray
    intercept: float
    lam: float
    coef_std: np.ndarray
    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cv_error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True


@dataclass
class BaselineResult:
    method: str
    importance: kf.ImportanceMatrix
    stats: kf.KnockoffStats

    def selection(self, alpha: float) -> kf.SelectionResult:
        return kf.select(self.stats, alpha)


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise ShapeError(f"{X.shape[0]} rows but {y.size} responses")
    return X, y


def _check_kind(kind):
    if kind not in ('quantitative', 'dichotomous'):
        raise ValidationError(f"Unknown trait kind: {kind}")


def _standardize(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = sd == 0
    sd[constant] = 1.0
    return (X - mean) / sd, mean, sd, constant


def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


class BaselineService:
    """Marginal, lasso and ridge comparators"""

    # ==================== marginal Wald ====================

    @classmethod
    def marginal_scores(cls, X, y, kind: str, cap: float = Z_CAP) -> GlmFit:
        """Single-predictor Wald statistics for every column at once"""
        _check_kind(kind)
        X, y = _check_xy(X, y)
        if kind == 'quantitative':
            return cls._linear_wald(X, y, cap)
        return cls._logistic_wald(X, y, cap)

    @classmethod
    def marginal_wald(cls, x, y, kind: str, cap: float = Z_CAP) -> GlmFit:
        x = np.asarray(x, dtype=np.float64).ravel()
        if np.ptp(x) == 0:
            raise ValidationError("Marginal test needs a non-constant predictor")
        return cls.marginal_scores(x[:, None], y, kind, cap)

    @classmethod
    def _linear_wald(cls, X, y, cap):
        n = y.size
        xc = X - X.mean(axis=0)
        yc = y - y.mean()
        sxx = (xc ** 2).sum(axis=0)
        sxy = xc.T @ yc
        syy = float(yc @ yc)
        constant = sxx == 0
        safe_sxx = np.where(constant, 1.0, sxx)
        coef = np.where(constant, 0.0, sxy / safe_sxx)
        rss = np.maximum(syy - coef * sxy, 0.0)
        se = np.sqrt(rss / max(n - 2, 1) / safe_sxx)
        with np.errstate(divide='ignore', invalid='ignore'):
            z = np.where(se > 0, coef / se, np.sign(coef) * cap)
        z = np.clip(np.where(constant, 0.0, z), -cap, cap)
        p_value = 2.0 * student_t.sf(np.abs(z), df=max(n - 2, 1))
        return GlmFit(coef=coef, se=se, z=z, p_value=p_value, converged=~constant,
                      iterations=np.zeros(X.shape[1], dtype=int))

    @classmethod
    def _logistic_wald(cls, X, y, cap):
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("Dichotomous response must be 0/1")
        n, p = X.shape
        ybar = y.mean()
        if ybar in (0.0, 1.0):
            raise ValidationError("Dichotomous response has a single class")
        b0 = np.full(p, np.log(ybar / (1.0 - ybar)))
        b1 = np.zeros(p)
        converged = np.zeros(p, dtype=bool)
        iterations = np.zeros(p, dtype=int)
        constant = np.ptp(X, axis=0) == 0
        for it in range(NEWTON_MAX_ITER):
            active = ~converged & ~constant
            if not active.any():
                break
            Xa = X[:, active]
            mu = expit(b0[active] + Xa * b1[active])
            w = mu * (1.0 - mu)
            resid = y[:, None] - mu
            g0, g1 = resid.sum(axis=0), (Xa * resid).sum(axis=0)
            h00, h01, h11 = w.sum(axis=0), (w * Xa).sum(axis=0), (w * Xa * Xa).sum(axis=0)
            det = h00 * h11 - h01 * h01
            det = np.where(np.abs(det) < 1e-300, np.nan, det)
            step0 = (h11 * g0 - h01 * g1) / det
            step1 = (h00 * g1 - h01 * g0) / det
            b0[active] += np.nan_to_num(step0)
            b1[active] += np.nan_to_num(step1)
            iterations[active] += 1
            done = np.isfinite(det) & (np.maximum(np.abs(step0), np.abs(step1)) < NEWTON_TOL)
            converged[np.flatnonzero(active)[done]] = True

        mu = expit(b0 + X * b1)
        w = mu * (1.0 - mu)
        h00, h01, h11 = w.sum(axis=0), (w * X).sum(axis=0), (w * X * X).sum(axis=0)
        det = h00 * h11 - h01 * h01
        with np.errstate(divide='ignore', invalid='ignore'):
            se = np.sqrt(np.where(det > 0, h00 / det, np.inf))
            z = np.where(np.isfinite(se) & (se > 0), b1 / se, np.sign(b1) * cap)
        flagged = ~converged & ~constant
        if flagged.any():
            logger.debug("%d logistic marginal fits did not converge; |z| capped", int(flagged.sum()))
        z = np.where(flagged, np.where(b1 < 0, -cap, cap), z)
        z = np.clip(np.where(constant, 0.0, z), -cap, cap)
        p_value = 2.0 * norm.sf(np.abs(z))
        return GlmFit(coef=b1, se=se, z=z, p_value=p_value, converged=converged, iterations=iterations)

    # ==================== lasso ====================

    @classmethod
    def _null_fit(cls, Xs, y, kind, unpenalized):
        """Intercept plus unpenalised columns; returns (intercept, beta)"""
        p = Xs.shape[1]
        beta = np.zeros(p)
        if kind == 'quantitative':
            if unpenalized.any():
                Z = np.column_stack([np.ones(y.size), Xs[:, unpenalized]])
                sol, *_ = linalg.lstsq(Z, y)
                beta[unpenalized] = sol[1:]
                return float(sol[0]), beta
            return float(y.mean()), beta
        ybar = y.mean()
        b0 = float(np.log(ybar / (1.0 - ybar)))
        if not unpenalized.any():
            return b0, beta
        Z = np.column_stack([np.ones(y.size), Xs[:, unpenalized]])
        coef = np.zeros(Z.shape[1])
        coef[0] = b0
        for _ in range(NEWTON_MAX_ITER):
            mu = expit(Z @ coef)
            w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
            step = linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (y - mu), assume_a='pos')
            coef += step
            if np.max(np.abs(step)) < NEWTON_TOL:
                break
        beta[unpenalized] = coef[1:]
        return float(coef[0]), beta

    @classmethod
    def lambda_max(cls, Xs, y, kind, penalty_factor) -> float:
        unpenalized = penalty_factor == 0
        b0, beta = cls._null_fit(Xs, y, kind, unpenalized)
        eta = b0 + Xs @ beta
        resid = y - (eta if kind == 'quantitative' else expit(eta))
        grad = np.abs(Xs.T @ resid) / y.size
        grad = np.where(unpenalized, 0.0, grad / np.where(unpenalized, 1.0, penalty_factor))
        return float(grad.max())

    @classmethod
    def _cd_sweep(cls, Xs, w, resid, beta, lam, penalty_factor, col_sq, columns):
        n = resid.size
        max_delta = 0.0
        for j in columns:
            v = col_sq[j]
            if v == 0:
                continue
            old = beta[j]
            g = float((w * Xs[:, j]) @ resid) / n + old * v
            new = soft_threshold(g, lam * penalty_factor[j]) / v
            if new != old:
                resid -= Xs[:, j] * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old) * np.sqrt(v))
        return max_delta

    @classmethod
    def _weighted_cd(cls, Xs, z, w, lam, penalty_factor, b0, beta, col_sq):
        """Coordinate descent on (1/2n)Σ w (z − b0 − Xβ)² + λ Σ pf|β|

        Full sweeps alternate with sweeps over the non-zero set until a full
        sweep moves nothing by more than the tolerance.
        """
        resid = z - b0 - Xs @ beta
        wsum = w.sum()
        everything = range(beta.size)
        sweeps = 0
        while sweeps < CD_MAX_SWEEPS:
            shift = float(w @ resid) / wsum
            b0 += shift
            resid -= shift
            delta = max(abs(shift), cls._cd_sweep(Xs, w, resid, beta, lam, penalty_factor,
                                                  col_sq, everything))
            sweeps += 1
            if delta < CD_TOL:
                return b0, beta, True
            active = np.flatnonzero(beta)
            while sweeps < CD_MAX_SWEEPS:
                shift = float(w @ resid) / wsum
                b0 += shift
                resid -= shift
                delta = max(abs(shift), cls._cd_sweep(Xs, w, resid, beta, lam, penalty_factor,
                                                      col_sq, active))
                sweeps += 1
                if delta < CD_TOL:
                    break
        return b0, beta, False

    @classmethod
    def _lasso_at(cls, Xs, y, kind, lam, penalty_factor, b0, beta):
        if kind == 'quantitative':
            w = np.ones(y.size)
            col_sq = (Xs ** 2).sum(axis=0) / y.size
            return cls._weighted_cd(Xs, y, w, lam, penalty_factor, b0, beta, col_sq)
        converged = False
        for _ in range(IRLS_MAX_ITER):
            eta = b0 + Xs @ beta
            mu = expit(eta)
            w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
            z = eta + (y - mu) / w
            col_sq = (w[:, None] * Xs ** 2).sum(axis=0) / y.size
            old_b0, old_beta = b0, beta.copy()
            b0, beta, inner_ok = cls._weighted_cd(Xs, z, w, lam, penalty_factor, b0, beta, col_sq)
            change = max(abs(b0 - old_b0), float(np.max(np.abs(beta - old_beta), initial=0.0)))
            if inner_ok and change < 1e-7:
                converged = True
                break
        return b0, beta, converged

    @classmethod
    def lasso_path(cls, Xs, y, kind: str, lambdas, penalty_factor=None):
        """Warm-started path on standardised columns; returns (intercepts, coef rows, converged)"""
        Xs = np.asfortranarray(Xs)
        p = Xs.shape[1]
        pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=np.float64)
        b0, beta = cls._null_fit(Xs, y, kind, pf == 0)
        intercepts, coefs, ok = [], [], True
        for lam in lambdas:
            b0, beta, converged = cls._lasso_at(Xs, y, kind, float(lam), pf, b0, beta.copy())
            ok &= converged
            intercepts.append(b0)
            coefs.append(beta.copy())
        if not ok:
            logger.warning("Lasso coordinate descent did not converge at every lambda")
        return np.array(intercepts), np.vstack(coefs), ok

    @classmethod
    def lasso_fit(cls, X, y, kind: str, lam: float, penalty_factor=None) -> RegularizedFit:
        """Lasso at a single λ (standardised scale); coefficients reported on the original scale"""
        _check_kind(kind)
        X, y = _check_xy(X, y)
        Xs, mean, sd, _ = _standardize(X)
        intercepts, coefs, ok = cls.lasso_path(Xs, y, kind, [lam], penalty_factor)
        return cls._to_original(coefs[0], intercepts[0], mean, sd, lam, ok)

    @classmethod
    def _to_original(cls, beta_std, b0_std, mean, sd, lam, converged, lambdas=None, cv_error=None):
        coef = beta_std / sd
        return RegularizedFit(coef=coef, intercept=float(b0_std - mean @ coef), lam=float(lam),
                              coef_std=beta_std.copy(),
                              lambdas=np.zeros(0) if lambdas is None else np.asarray(lambdas),
                              cv_error=np.zeros(0) if cv_error is None else np.asarray(cv_error),
                              converged=bool(converged))

    @classmethod
    def _prediction_error(cls, kind, y, eta):
        if kind == 'quantitative':
            return float(np.mean((y - eta) ** 2))
        mu = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
        return float(-2.0 * np.mean(y * np.log(mu) + (1.0 - y) * np.log1p(-mu)))

    @classmethod
    def _splits(cls, kind, y, folds, seed):
        if kind == 'dichotomous':
            return StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed).split(
                np.zeros(y.size), y.astype(int))
        return KFold(n_splits=folds, shuffle=True, random_state=seed).split(np.zeros(y.size))

    @classmethod
    def lasso_cv(cls, X, y, kind: str, folds: int = 5, path_length: int = PATH_LENGTH,
                 penalty_factor=None, seed: int = 0) -> RegularizedFit:
        _check_kind(kind)
        X, y = _check_xy(X, y)
        if folds < 2:
            raise ValidationError("Cross-validation needs at least 2 folds")
        Xs, mean, sd, _ = _standardize(X)
        pf = np.ones(X.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, dtype=np.float64)
        top = cls.lambda_max(Xs, y, kind, pf)
        if top <= 0:
            raise NumericalError("lambda_max is zero; response carries no signal to penalise")
        lambdas = top * np.logspace(0.0, -PATH_DECADES, path_length)

        errors = np.zeros((folds, path_length))
        for f, (train_idx, test_idx) in enumerate(cls._splits(kind, y, folds, seed)):
            b0s, coefs, _ = cls.lasso_path(Xs[train_idx], y[train_idx], kind, lambdas, pf)
            eta = b0s[None, :] + Xs[test_idx] @ coefs.T
            errors[f] = [cls._prediction_error(kind, y[test_idx], eta[:, k]) for k in range(path_length)]
        cv_error = errors.mean(axis=0)
        best = int(np.argmin(cv_error))

        b0s, coefs, ok = cls.lasso_path(Xs, y, kind, lambdas[:best + 1], pf)
        if not ok:
            logger.warning("Lasso path flagged non-convergence (lambda index %d)", best)
        return cls._to_original(coefs[-1], b0s[-1], mean, sd, lambdas[best], ok,
                                lambdas=lambdas, cv_error=cv_error)

    # ==================== ridge ====================

    @classmethod
    def ridge_fit(cls, X, y, lam: float, kind: str = 'quantitative', penalty_factor=None,
                  fit_intercept: bool = True, start=None) -> RegularizedFit:
        """Solve (XᵀX + λ·diag(pf))β = Xᵀy on centred data, or penalised Newton for 0/1 y

        ``start`` warm-starts the Newton iterations (intercept first when fitted).
        """
        _check_kind(kind)
        X, y = _check_xy(X, y)
        if lam < 0:
            raise ValidationError("Ridge penalty must be non-negative")
        p = X.shape[1]
        pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=np.float64)
        penalty = np.diag(lam * pf)

        if kind == 'quantitative':
            x_mean = X.mean(axis=0) if fit_intercept else np.zeros(p)
            y_mean = float(y.mean()) if fit_intercept else 0.0
            Xc, yc = X - x_mean, y - y_mean
            try:
                beta = linalg.solve(Xc.T @ Xc + penalty, Xc.T @ yc, assume_a='sym')
            except linalg.LinAlgError as e:
                raise NumericalError(f"Ridge system is singular at lambda={lam}: {e}")
            intercept = y_mean - float(x_mean @ beta)
            return RegularizedFit(coef=beta, intercept=intercept, lam=lam, coef_std=beta.copy())

        Z = np.column_stack([np.ones(y.size), X]) if fit_intercept else X
        pen = np.zeros((Z.shape[1], Z.shape[1]))
        pen[-p:, -p:] = penalty
        coef = np.zeros(Z.shape[1]) if start is None else np.array(start, dtype=np.float64)
        for it in range(NEWTON_MAX_ITER * 2):
            mu = expit(Z @ coef)
            w = mu * (1.0 - mu)
            grad = Z.T @ (y - mu) - pen @ coef
            hess = Z.T @ (w[:, None] * Z) + pen
            try:
                step = linalg.solve(hess, grad, assume_a='sym')
            except linalg.LinAlgError as e:
                raise NumericalError(f"Penalised Newton system is singular at lambda={lam}: {e}")
            coef += step
            if np.max(np.abs(step)) < NEWTON_TOL:
                break
        else:
            raise ConvergenceError(f"Penalised logistic ridge did not converge at lambda={lam}")
        intercept = float(coef[0]) if fit_intercept else 0.0
        beta = coef[-p:]
        return RegularizedFit(coef=beta, intercept=intercept, lam=lam, coef_std=beta.copy())

    @classmethod
    def ridge_cv(cls, X, y, kind: str, folds: int = 5, path_length: int = 30,
                 penalty_factor=None, seed: int = 0) -> RegularizedFit:
        """Ridge on standardised columns with λ chosen by K-fold CV over a log grid"""
        _check_kind(kind)
        X, y = _check_xy(X, y)
        Xs, mean, sd, _ = _standardize(X)
        lambdas = y.size * np.logspace(1.0, -4.0, path_length)
        errors = np.zeros((folds, path_length))
        for f, (train_idx, test_idx) in enumerate(cls._splits(kind, y, folds, seed)):
            start = None
            for k, lam in enumerate(lambdas):
                fit = cls.ridge_fit(Xs[train_idx], y[train_idx], lam, kind, penalty_factor, start=start)
                start = np.concatenate([[fit.intercept], fit.coef])
                eta = fit.intercept + Xs[test_idx] @ fit.coef
                errors[f, k] = cls._prediction_error(kind, y[test_idx], eta)
        cv_error = errors.mean(axis=0)
        best = int(np.argmin(cv_error))
        fit = cls.ridge_fit(Xs, y, lambdas[best], kind, penalty_factor)
        return cls._to_original(fit.coef, fit.intercept, mean, sd, lambdas[best], True,
                                lambdas=lambdas, cv_error=cv_error)

    # ==================== single-knockoff pipeline ====================

    @classmethod
    def baseline_pipeline(cls, X, X_knockoff, covariates, y, kind: str, method: str,
                          feature_ids: Optional[Sequence[str]] = None, folds: int = 5,
                          seed: int = 0) -> BaselineResult:
        """W_j = importance(x_j) − importance(x̃_j) with single-knockoff Q-values"""
        if method not in BASELINE_METHODS:
            raise ValidationError(f"Unknown baseline method: {method}")
        X = np.asarray(X, dtype=np.float64)
        K = np.asarray(X_knockoff, dtype=np.float64)
        if K.ndim == 3:
            if K.shape[2] != 1:
                raise ShapeError(f"Baseline pipelines take a single knockoff, got {K.shape[2]}")
            K = K[:, :, 0]
        if K.shape != X.shape:
            raise ShapeError(f"Knockoff shape {K.shape} != feature shape {X.shape}")
        n, p = X.shape
        cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64).reshape(n, -1)

        if method == 'marginal':
            scores = cls.marginal_scores(np.hstack([X, K]), y, kind).importance
        else:
            design = np.hstack([X, K, cov])
            pf = np.concatenate([np.ones(2 * p), np.zeros(cov.shape[1])])
            if method == 'lasso':
                fit = cls.lasso_cv(design, y, kind, folds=folds, penalty_factor=pf, seed=seed)
            else:
                fit = cls.ridge_cv(design, y, kind, folds=folds, penalty_factor=pf, seed=seed)
            scores = np.abs(fit.coef_std[:2 * p])

        T = np.column_stack([scores[:p], scores[p:2 * p]])
        ids: List[str] = list(feature_ids) if feature_ids is not None else [f"v{j + 1}" for j in range(p)]
        importance = kf.ImportanceMatrix(T=T, feature_ids=ids)
        return BaselineResult(method=method, importance=importance, stats=kf.knockoff_stats(importance))
