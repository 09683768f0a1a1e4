# -*- coding: utf-8 -*-
"""
Network engine: gradients, losses, metrics, optimiser
"""
import math

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from services.domain import nn_core
from services.domain.nn_core import LayerSpec, NetworkSpec
from utils.errors import NumericalError, ShapeError, ValidationError


def small_spec(head='linear', l1=0.0):
    p, copies = 4, 3
    layers = (
        LayerSpec('locally_connected', input_width=p * copies, group_size=copies, stride=copies,
                  activation='elu', l1=l1, name='feature_wise'),
        LayerSpec('dense', input_width=p, channels=3, activation='tanh', l1=l1, name='dense_1'),
        LayerSpec('covariate_merge', input_width=3, n_covariates=1),
        LayerSpec('output', input_width=4, channels=1, activation=head, l1=l1, name='output'),
    )
    return NetworkSpec(layers=layers, p=p, copies=copies, n_covariates=1)


def small_batch(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((7, 4, 3))
    cov = rng.standard_normal((7, 1))
    return X, cov


def objective(spec, state, X, cov, y, kind):
    return nn_core.loss(kind, y, nn_core.forward(spec, state, X, cov)) + nn_core.l1_penalty(spec, state)


@pytest.mark.parametrize('head,kind', [('linear', 'mse'), ('sigmoid', 'bce')])
def test_parameter_gradients_match_finite_differences(head, kind):
    spec = small_spec(head)
    state = nn_core.init_state(spec, seed=3)
    X, cov = small_batch()
    y = np.array([0, 1, 1, 0, 1, 0, 1], dtype=float)

    result = nn_core.backprop(spec, state, X, cov, y, kind)
    eps = 1e-6
    for idx, params in enumerate(state.params):
        if params is None:
            continue
        for key in ('W', 'b'):
            flat = params[key].reshape(-1)
            for pos in range(0, flat.size, max(1, flat.size // 5)):
                original = flat[pos]
                flat[pos] = original + eps
                up = objective(spec, state, X, cov, y, kind)
                flat[pos] = original - eps
                down = objective(spec, state, X, cov, y, kind)
                flat[pos] = original
                numeric = (up - down) / (2 * eps)
                analytic = result.grads[idx][key].reshape(-1)[pos]
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_input_gradients_match_finite_differences():
    spec = small_spec()
    state = nn_core.init_state(spec, seed=5)
    X, cov = small_batch(1)
    grads = nn_core.input_gradients(spec, state, X, cov)
    assert grads.shape == (7, 4, 3)

    eps = 1e-6
    for i, j, m in [(0, 0, 0), (2, 1, 2), (6, 3, 1)]:
        bumped = X.copy()
        bumped[i, j, m] += eps
        up = nn_core.forward(spec, state, bumped, cov)[i]
        bumped[i, j, m] -= 2 * eps
        down = nn_core.forward(spec, state, bumped, cov)[i]
        assert grads[i, j, m] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)


def test_l1_subgradient_added_to_weights_only():
    plain, penalised = small_spec(l1=0.0), small_spec(l1=0.01)
    state = nn_core.init_state(plain, seed=1)
    X, cov = small_batch()
    y = np.linspace(-1, 1, 7)
    g0 = nn_core.backprop(plain, state, X, cov, y, 'mse').grads
    g1 = nn_core.backprop(penalised, state, X, cov, y, 'mse').grads
    for idx, params in enumerate(state.params):
        if params is None:
            continue
        np.testing.assert_allclose(g1[idx]['W'] - g0[idx]['W'], 0.01 * np.sign(params['W']))
        np.testing.assert_allclose(g1[idx]['b'], g0[idx]['b'])


def test_loss_reference_values():
    assert nn_core.loss('mse', [1, 2], [1, 4]) == pytest.approx(2.0)
    assert nn_core.loss('bce', [1], [0.5]) == pytest.approx(math.log(2))
    # clamped, never infinite
    assert math.isfinite(nn_core.loss('bce', [1, 0], [0.0, 1.0]))


def test_loss_rejects_bad_input():
    with pytest.raises(ShapeError):
        nn_core.loss('mse', [1, 2], [1])
    with pytest.raises(ValidationError):
        nn_core.loss('bce', [2], [0.5])
    with pytest.raises(NumericalError):
        nn_core.loss('mse', [1], [np.inf])


def test_auc_matches_sklearn_with_ties():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, size=200)
    scores = np.round(rng.standard_normal(200) + y, 1)
    assert nn_core.auc_from_labels(y, scores) == pytest.approx(roc_auc_score(y, scores))


def test_auc_edge_values():
    assert nn_core.auc([1, 1], [1, 1]) == 0.5
    assert nn_core.auc([3, 4], [1, 2]) == 1.0
    with pytest.raises(ValidationError):
        nn_core.auc([], [1.0])


def test_auc_matches_pair_enumeration():
    rng = np.random.default_rng(12)
    for _ in range(100):
        pos = rng.integers(0, 6, size=int(rng.integers(1, 15))).astype(float)
        neg = rng.integers(0, 6, size=int(rng.integers(1, 15))).astype(float)
        wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
        assert nn_core.auc(pos, neg) == wins / (pos.size * neg.size)


def test_adam_zero_learning_rate_keeps_parameters():
    spec = small_spec()
    state = nn_core.init_state(spec, seed=0)
    X, cov = small_batch()
    grads = nn_core.backprop(spec, state, X, cov, np.zeros(7), 'mse').grads
    stepped = nn_core.adam_step(state, grads, lr=0.0)
    assert stepped.t == 1
    for before, after in zip(state.params, stepped.params):
        if before is not None:
            np.testing.assert_array_equal(before['W'], after['W'])


def test_adam_first_step_moves_by_learning_rate():
    spec = small_spec()
    state = nn_core.init_state(spec, seed=0)
    X, cov = small_batch()
    grads = nn_core.backprop(spec, state, X, cov, np.ones(7), 'mse').grads
    stepped = nn_core.adam_step(state, grads, lr=0.01)
    delta = np.abs(stepped.params[0]['W'] - state.params[0]['W'])
    moved = np.abs(grads[0]['W']) > 1e-4
    np.testing.assert_allclose(delta[moved], 0.01, rtol=1e-3)


def test_init_state_is_deterministic_glorot():
    spec = small_spec()
    a = nn_core.init_state(spec, seed=9)
    b = nn_core.init_state(spec, seed=9)
    np.testing.assert_array_equal(a.params[1]['W'], b.params[1]['W'])
    limit = math.sqrt(6.0 / (4 + 3))
    assert np.all(np.abs(a.params[1]['W']) <= limit)
    assert not a.params[1]['b'].any()


def test_spec_rejects_mismatched_widths():
    with pytest.raises(ShapeError):
        NetworkSpec(layers=(LayerSpec('output', input_width=5, channels=1),), p=2, copies=3)
    with pytest.raises(ValidationError):
        LayerSpec('dense', input_width=4, activation='swish')


def test_locally_connected_padding_adds_a_partial_group():
    layer = LayerSpec('locally_connected', input_width=11, group_size=5, stride=5, pad=True)
    assert layer.n_groups == 3
    assert LayerSpec('locally_connected', input_width=11, group_size=5, stride=5).n_groups == 2
