# -*- coding: utf-8 -*-
"""
Marginal, lasso and ridge comparators
"""
import numpy as np
import pytest
from scipy import linalg, stats
from scipy.special import expit

from services.baseline_service import Z_CAP, BaselineService, _standardize, soft_threshold
from utils.errors import ShapeError, ValidationError


@pytest.fixture
def linear_data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((150, 6))
    y = 3.0 * X[:, 0] - 1.5 * X[:, 2] + rng.standard_normal(150)
    return X, y


@pytest.fixture
def logistic_data():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, 4))
    y = (rng.uniform(size=300) < expit(-0.5 + 1.2 * X[:, 1])).astype(float)
    return X, y


# ==================== marginal ====================

def test_linear_wald_matches_linregress(linear_data):
    X, y = linear_data
    fit = BaselineService.marginal_scores(X, y, 'quantitative')
    for j in range(X.shape[1]):
        ref = stats.linregress(X[:, j], y)
        assert fit.coef[j] == pytest.approx(ref.slope)
        assert fit.z[j] == pytest.approx(ref.slope / ref.stderr)
        assert fit.p_value[j] == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-300)


def newton_logistic(x, y, iterations=50):
    Z = np.column_stack([np.ones(x.size), x])
    coef = np.zeros(2)
    for _ in range(iterations):
        mu = expit(Z @ coef)
        hess = Z.T @ ((mu * (1 - mu))[:, None] * Z)
        coef = coef + np.linalg.solve(hess, Z.T @ (y - mu))
    mu = expit(Z @ coef)
    hess = Z.T @ ((mu * (1 - mu))[:, None] * Z)
    return coef, np.sqrt(np.linalg.inv(hess)[1, 1])


def test_logistic_wald_matches_two_parameter_newton(logistic_data):
    X, y = logistic_data
    fit = BaselineService.marginal_scores(X, y, 'dichotomous')
    assert fit.converged.all()
    for j in range(X.shape[1]):
        coef, se = newton_logistic(X[:, j], y)
        assert fit.coef[j] == pytest.approx(coef[1], rel=1e-6, abs=1e-9)
        assert fit.se[j] == pytest.approx(se, rel=1e-6)
        assert fit.z[j] == pytest.approx(coef[1] / se, rel=1e-6, abs=1e-9)
    assert np.argmax(fit.importance) == 1


def test_perfect_fits_are_capped():
    x = np.arange(20, dtype=float)
    assert BaselineService.marginal_wald(x, 2.0 * x, 'quantitative').z[0] == pytest.approx(Z_CAP)
    separated = (x >= 10).astype(float)
    fit = BaselineService.marginal_wald(x, separated, 'dichotomous')
    assert fit.z[0] == Z_CAP
    assert not fit.converged[0]
    fit = BaselineService.marginal_wald(-x, separated, 'dichotomous')
    assert fit.z[0] == -Z_CAP


def test_marginal_rejects_constant_and_one_class():
    with pytest.raises(ValidationError):
        BaselineService.marginal_wald(np.ones(10), np.arange(10.0), 'quantitative')
    with pytest.raises(ValidationError):
        BaselineService.marginal_scores(np.random.default_rng(0).standard_normal((10, 2)),
                                        np.ones(10), 'dichotomous')
    with pytest.raises(ShapeError):
        BaselineService.marginal_scores(np.zeros((10, 2)), np.zeros(9), 'quantitative')


# ==================== lasso ====================

def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0


@pytest.mark.parametrize('kind', ['quantitative', 'dichotomous'])
def test_lambda_max_zeroes_every_coefficient(kind, linear_data, logistic_data):
    X, y = linear_data if kind == 'quantitative' else logistic_data
    Xs = _standardize(X)[0]
    top = BaselineService.lambda_max(Xs, y, kind, np.ones(X.shape[1]))
    assert not BaselineService.lasso_fit(X, y, kind, top * 1.000001).coef.any()
    assert BaselineService.lasso_fit(X, y, kind, top * 0.8).coef.any()


def test_orthonormal_design_gives_soft_thresholded_correlations():
    H = linalg.hadamard(8)[:, 1:4].astype(float)
    y = np.array([3.0, -1.0, 2.0, 0.5, -2.0, 1.0, 0.0, 4.0])
    lam = 0.3
    b0s, coefs, ok = BaselineService.lasso_path(H, y, 'quantitative', [lam])
    assert ok
    expected = [soft_threshold(float(H[:, j] @ y) / 8, lam) for j in range(3)]
    np.testing.assert_allclose(coefs[0], expected, atol=1e-9)
    assert b0s[0] == pytest.approx(y.mean())


def test_tiny_lambda_recovers_least_squares(linear_data):
    X, y = linear_data
    fit = BaselineService.lasso_fit(X, y, 'quantitative', 1e-10)
    design = np.column_stack([np.ones(X.shape[0]), X])
    ols = np.linalg.lstsq(design, y, rcond=None)[0]
    np.testing.assert_allclose(fit.coef, ols[1:], atol=1e-5)
    assert fit.intercept == pytest.approx(ols[0], abs=1e-5)


def test_unpenalized_columns_stay_in_the_model(linear_data):
    X, y = linear_data
    pf = np.array([1, 1, 1, 1, 1, 0], dtype=float)
    Xs = _standardize(X)[0]
    top = BaselineService.lambda_max(Xs, y, 'quantitative', pf)
    fit = BaselineService.lasso_fit(X, y, 'quantitative', top * 1.01, penalty_factor=pf)
    assert not fit.coef[:5].any()
    assert fit.coef[5] != 0.0


def test_lasso_cv_path_and_choice(linear_data):
    X, y = linear_data
    fit = BaselineService.lasso_cv(X, y, 'quantitative', folds=3, path_length=20, seed=0)
    assert fit.lambdas.size == 20
    assert fit.cv_error.size == 20
    assert fit.lam in fit.lambdas
    assert fit.lambdas[0] / fit.lambdas[-1] == pytest.approx(1000.0)
    assert set(np.flatnonzero(np.abs(fit.coef) > 0.5)) == {0, 2}


# ==================== ridge ====================

def test_ridge_direct_solve(linear_data):
    X, y = linear_data
    fit = BaselineService.ridge_fit(X, y, 5.0)
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    expected = np.linalg.solve(Xc.T @ Xc + 5.0 * np.eye(6), Xc.T @ yc)
    np.testing.assert_allclose(fit.coef, expected)
    assert fit.intercept == pytest.approx(y.mean() - X.mean(axis=0) @ expected)


def test_ridge_without_penalty_is_least_squares(linear_data):
    X, y = linear_data
    fit = BaselineService.ridge_fit(X, y, 0.0)
    ols = np.linalg.lstsq(np.column_stack([np.ones(150), X]), y, rcond=None)[0]
    np.testing.assert_allclose(fit.coef, ols[1:], atol=1e-8)


def test_logistic_ridge_stationarity(logistic_data):
    X, y = logistic_data
    lam = 2.0
    fit = BaselineService.ridge_fit(X, y, lam, kind='dichotomous')
    mu = expit(fit.intercept + X @ fit.coef)
    np.testing.assert_allclose(X.T @ (y - mu), lam * fit.coef, atol=1e-6)
    assert float(np.sum(y - mu)) == pytest.approx(0.0, abs=1e-6)


def test_ridge_rejects_negative_penalty(linear_data):
    X, y = linear_data
    with pytest.raises(ValidationError):
        BaselineService.ridge_fit(X, y, -1.0)


def test_ridge_cv_grid(linear_data):
    X, y = linear_data
    fit = BaselineService.ridge_cv(X, y, 'quantitative', folds=3, seed=1)
    assert fit.lambdas.size == 30
    assert fit.lambdas[0] == pytest.approx(150 * 10.0)
    assert np.argmax(np.abs(fit.coef)) == 0


# ==================== single-knockoff pipeline ====================

def test_identical_knockoff_gives_zero_statistics(linear_data):
    X, y = linear_data
    result = BaselineService.baseline_pipeline(X, X.copy(), None, y, 'quantitative', 'marginal')
    np.testing.assert_allclose(result.stats.W, 0.0, atol=1e-9)


@pytest.mark.parametrize('method', ['marginal', 'lasso', 'ridge'])
def test_pipeline_favours_the_signal(method, linear_data):
    X, y = linear_data
    rng = np.random.default_rng(9)
    K = rng.standard_normal(X.shape)
    result = BaselineService.baseline_pipeline(X, K, rng.standard_normal(150), y, 'quantitative',
                                               method, folds=3)
    assert result.importance.T.shape == (6, 2)
    assert result.stats.M == 1
    assert result.stats.W[0] > 0
    assert result.stats.W[0] == result.stats.W.max()


def test_pipeline_rejects_multiple_knockoffs(linear_data):
    X, y = linear_data
    with pytest.raises(ShapeError):
        BaselineService.baseline_pipeline(X, np.zeros((150, 6, 2)), None, y, 'quantitative', 'ridge')
    with pytest.raises(ValidationError):
        BaselineService.baseline_pipeline(X, X, None, y, 'quantitative', 'forest')
