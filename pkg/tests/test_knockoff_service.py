# -*- coding: utf-8 -*-
"""
Sequential conditional knockoffs
"""
import numpy as np
import pytest

from services.knockoff_service import KnockoffService, KnockoffTensor, RIDGE_SCALE, augment
from utils.errors import ShapeError, ValidationError


def test_generation_is_deterministic_per_seed(ar1_gaussian):
    X = ar1_gaussian(120, 8, 0.5)
    a = KnockoffService.scit_generate(X, M=3, window=3, seed=11)
    b = KnockoffService.scit_generate(X, M=3, window=3, seed=11)
    c = KnockoffService.scit_generate(X, M=3, window=3, seed=12)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.values.shape == (120, 8, 3)


def test_knockoffs_preserve_column_means(ar1_gaussian):
    X = ar1_gaussian(200, 6, 0.6) + 3.0
    K = KnockoffService.scit_generate(X, M=4, window=2, seed=0)
    np.testing.assert_allclose(K.values.mean(axis=0), np.repeat(X.mean(axis=0)[:, None], 4, axis=1),
                               atol=1e-10)


def test_constant_column_is_copied():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 3, size=(50, 4)).astype(float)
    X[:, 2] = 1.0
    K = KnockoffService.scit_generate(X, M=2, window=2, seed=1)
    np.testing.assert_array_equal(K.values[:, 2, :], 1.0)
    fit = KnockoffService.conditional_fit(X, None, 2, window=2)
    assert fit.constant
    assert not fit.residuals.any()


def test_duplicate_columns_stay_finite():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((80, 5))
    X[:, 3] = X[:, 2]
    K = KnockoffService.scit_generate(X, M=2, window=4, seed=0)
    assert np.isfinite(K.values).all()


def test_conditional_fit_solves_ridge_normal_equations(ar1_gaussian):
    X = ar1_gaussian(60, 7, 0.4, seed=3)
    j, window = 3, 2
    fit = KnockoffService.conditional_fit(X, None, j, window)
    assert fit.columns == ['x1', 'x2', 'x4', 'x5']

    Z = X[:, [1, 2, 4, 5]]
    Zc = Z - Z.mean(axis=0)
    gram = Zc.T @ Zc
    lam = RIDGE_SCALE * np.trace(gram) / 4
    lhs = (gram + lam * np.eye(4)) @ fit.coefficients
    rhs = Zc.T @ (X[:, j] - X[:, j].mean())
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.fitted + fit.residuals, X[:, j])
    np.testing.assert_allclose(fit.intercept + Z @ fit.coefficients, fit.fitted)


def test_conditioning_set_uses_earlier_knockoffs_only():
    X = np.arange(40, dtype=float).reshape(10, 4)
    knockoffs = np.zeros((10, 4, 2))
    Z, names = KnockoffService.conditioning_set(X, knockoffs, 2, window=1)
    assert names == ['x1', 'x3', 'x1@k1', 'x1@k2']
    assert Z.shape == (10, 4)


def test_first_feature_uses_only_later_originals():
    X = np.random.default_rng(0).standard_normal((30, 5))
    _, names = KnockoffService.conditioning_set(X, np.zeros((30, 5, 3)), 0, window=2)
    assert names == ['x1', 'x2']


def test_diagnostics_of_exact_copy():
    X = np.random.default_rng(2).standard_normal((40, 3))
    K = np.repeat(X[:, :, None], 2, axis=2)
    report = KnockoffService.diagnostics(X, K)
    np.testing.assert_allclose(report.mean_gap, 0.0, atol=1e-12)
    np.testing.assert_allclose(report.var_gap, 0.0, atol=1e-12)
    np.testing.assert_allclose(report.orig_ko_corr, 1.0)
    np.testing.assert_allclose(report.neighbor_gap, 0.0, atol=1e-12)
    assert report.fraction_within(1e-9) == 1.0
    assert set(report.summary()) == {'max_mean_gap', 'max_var_gap', 'max_abs_orig_ko_corr',
                                     'max_neighbor_gap'}


@pytest.mark.slow
def test_exchangeability_on_gaussian_ar1(ar1_gaussian):
    X = ar1_gaussian(2000, 20, 0.7, seed=5)
    K = KnockoffService.scit_generate(X, M=5, window=5, seed=1)
    report = KnockoffService.diagnostics(X, K)
    assert report.fraction_within(0.1, 'var_gap') > 0.95
    assert report.fraction_within(0.1, 'neighbor_gap') > 0.95


def test_tensor_shapes_and_augmentation():
    X = np.ones((5, 3))
    tensor = KnockoffTensor(values=np.zeros((5, 3, 2)), M=2, seed=0, window=1)
    aug = augment(X, tensor)
    assert aug.shape == (5, 3, 3)
    np.testing.assert_array_equal(aug[:, :, 0], 1.0)
    assert augment(X, None).shape == (5, 3, 1)
    assert tensor.first(1).values.shape == (5, 3, 1)
    with pytest.raises(ShapeError):
        tensor.augmented(np.ones((4, 3)))
    with pytest.raises(ValidationError):
        tensor.first(3)


def test_rejects_bad_arguments():
    X = np.zeros((10, 3))
    with pytest.raises(ValidationError):
        KnockoffService.scit_generate(X, M=0)
    with pytest.raises(ValidationError):
        KnockoffService.scit_generate(X, M=1, window=0)
    with pytest.raises(ShapeError):
        KnockoffService.scit_generate(np.zeros(10), M=1)
