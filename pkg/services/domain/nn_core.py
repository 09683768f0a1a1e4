#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Minimal network engine

Dense and locally-connected (unshared weight) layers over float64 numpy
arrays, exact reverse-mode gradients for parameters and inputs, Adam, the
MSE/BCE losses and the rank AUC.

A tensor here is a plain ``numpy.ndarray`` of dtype float64. Network input is
the augmented n×p×(M+1) array flattened row-major, so the M+1 copies of a
feature are adjacent with the original at slot 0.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from utils.errors import NumericalError, ShapeError, ValidationError, ensure_finite

ACTIVATIONS = ('elu', 'relu', 'sigmoid', 'tanh', 'linear')
LAYER_KINDS = ('locally_connected', 'dense', 'flatten', 'covariate_merge', 'output')
LOSS_KINDS = ('mse', 'bce')

BCE_CLAMP = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ==================== activations ====================

def activation(kind: str, z, a: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Return (f(z), f'(z)) elementwise"""
    z = np.asarray(z, dtype=np.float64)
    if kind == 'elu':
        if a <= 0:
            raise ValidationError(f"ELU scale must be positive, got {a}")
        neg = np.minimum(z, 0.0)
        value = np.where(z > 0, z, a * np.expm1(neg))
        deriv = np.where(z > 0, 1.0, a * np.exp(neg))
    elif kind == 'relu':
        value = np.maximum(z, 0.0)
        deriv = (z > 0).astype(np.float64)
    elif kind == 'sigmoid':
        value = expit(z)
        deriv = value * (1.0 - value)
    elif kind == 'tanh':
        value = np.tanh(z)
        deriv = 1.0 - value * value
    elif kind == 'linear':
        value = z.copy()
        deriv = np.ones_like(z)
    else:
        raise ValidationError(f"Unknown activation: {kind}")
    return value, deriv


# ==================== architecture description ====================

@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``channels`` is the unit count for dense/output layers."""
    kind: str
    input_width: int
    group_size: int = 1
    stride: int = 1
    channels: int = 1
    activation: str = 'linear'
    l1: float = 0.0
    pad: bool = False
    n_covariates: int = 0
    elu_alpha: float = 1.0
    name: str = ''

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"Unknown layer kind: {self.kind}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"Unknown activation: {self.activation}")
        if self.group_size < 1 or self.stride < 1 or self.channels < 1:
            raise ValidationError(
                f"Layer {self.name or self.kind}: group size, stride and channels must be >= 1")
        if self.input_width < 1:
            raise ValidationError(f"Layer {self.name or self.kind}: input width must be >= 1")
        if self.l1 < 0:
            raise ValidationError("l1 coefficient must be non-negative")

    @property
    def has_params(self) -> bool:
        return self.kind in ('locally_connected', 'dense', 'output')

    @property
    def n_groups(self) -> int:
        if self.kind != 'locally_connected':
            return 0
        if self.pad:
            span = max(self.input_width - self.group_size, 0)
            return -(-span // self.stride) + 1
        if self.input_width < self.group_size:
            return 0
        return (self.input_width - self.group_size) // self.stride + 1

    @property
    def padded_width(self) -> int:
        if self.kind != 'locally_connected':
            return self.input_width
        return max(self.input_width, (self.n_groups - 1) * self.stride + self.group_size)

    @property
    def output_width(self) -> int:
        if self.kind == 'locally_connected':
            return self.n_groups * self.channels
        if self.kind in ('dense', 'output'):
            return self.channels
        if self.kind == 'covariate_merge':
            return self.input_width + self.n_covariates
        return self.input_width

    @property
    def weight_shape(self) -> Optional[Tuple[int, ...]]:
        if self.kind == 'locally_connected':
            return (self.n_groups, self.group_size, self.channels)
        if self.kind in ('dense', 'output'):
            return (self.input_width, self.channels)
        return None

    @property
    def bias_shape(self) -> Optional[Tuple[int, ...]]:
        if self.kind == 'locally_connected':
            return (self.n_groups, self.channels)
        if self.kind in ('dense', 'output'):
            return (self.channels,)
        return None

    @property
    def n_params(self) -> int:
        if not self.has_params:
            return 0
        return int(np.prod(self.weight_shape)) + int(np.prod(self.bias_shape))

    @property
    def n_activations(self) -> int:
        """Neurons carrying an activation function"""
        return self.output_width if self.has_params else 0

    def patch_index(self) -> np.ndarray:
        starts = np.arange(self.n_groups) * self.stride
        return starts[:, None] + np.arange(self.group_size)[None, :]


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    p: int
    copies: int
    n_covariates: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("Network needs at least one layer")
        width = self.p * self.copies
        for layer in self.layers:
            if layer.input_width != width:
                raise ShapeError(
                    f"Layer {layer.name or layer.kind} expects width {layer.input_width}, "
                    f"receives {width}")
            if layer.kind == 'covariate_merge' and layer.n_covariates != self.n_covariates:
                raise ShapeError("Covariate merge width disagrees with network covariate count")
            if layer.kind == 'locally_connected' and layer.n_groups == 0:
                raise ValidationError(
                    f"Layer {layer.name or layer.kind} has zero groups "
                    f"(width {layer.input_width} < group size {layer.group_size})")
            width = layer.output_width
        if width != 1:
            raise ShapeError(f"Network must end in a single unit, ends in {width}")

    @property
    def head(self) -> str:
        return self.layers[-1].activation

    @property
    def input_width(self) -> int:
        return self.p * self.copies

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def n_activations(self) -> int:
        return sum(layer.n_activations for layer in self.layers)


@dataclass
class ModelState:
    """Trained weights plus Adam accumulators"""
    params: List[Optional[Dict[str, np.ndarray]]]
    m: List[Optional[Dict[str, np.ndarray]]]
    v: List[Optional[Dict[str, np.ndarray]]]
    t: int = 0
    seed: int = 0

    def copy(self) -> 'ModelState':
        return ModelState(
            params=_copy_tree(self.params),
            m=_copy_tree(self.m),
            v=_copy_tree(self.v),
            t=self.t,
            seed=self.seed,
        )


@dataclass
class TrainHistory:
    metric: str = 'auc'
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_metric: List[float] = field(default_factory=list)

    def append(self, train_loss: float, val_loss: float, val_metric: float):
        for value in (train_loss, val_loss):
            if not math.isfinite(value):
                raise NumericalError(f"Non-finite loss at epoch {len(self.epochs)}")
        self.epochs.append(len(self.epochs))
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.val_metric.append(float(val_metric))

    def __len__(self):
        return len(self.epochs)

    @property
    def higher_is_better(self) -> bool:
        return self.metric == 'auc'


@dataclass
class BackpropResult:
    loss: float
    grads: List[Optional[Dict[str, np.ndarray]]]


def _copy_tree(tree):
    return [None if d is None else {k: v.copy() for k, v in d.items()} for d in tree]


def _zeros_like_tree(tree):
    return [None if d is None else {k: np.zeros_like(v) for k, v in d.items()} for d in tree]


# ==================== initialisation ====================

def init_state(spec: NetworkSpec, seed: int) -> ModelState:
    """Glorot-uniform weights, zero biases"""
    rng = np.random.default_rng(seed)
    params = []
    for layer in spec.layers:
        if not layer.has_params:
            params.append(None)
            continue
        if layer.kind == 'locally_connected':
            fan_in, fan_out = layer.group_size, layer.channels
        else:
            fan_in, fan_out = layer.input_width, layer.channels
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params.append({
            'W': rng.uniform(-limit, limit, size=layer.weight_shape),
            'b': np.zeros(layer.bias_shape),
        })
    return ModelState(params=params, m=_zeros_like_tree(params), v=_zeros_like_tree(params),
                      t=0, seed=int(seed))


# ==================== forward ====================

@dataclass
class _LayerCache:
    inp: np.ndarray
    deriv: Optional[np.ndarray] = None
    patches: Optional[np.ndarray] = None


def _flatten_input(spec: NetworkSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        if X.shape[1:] != (spec.p, spec.copies):
            raise ShapeError(f"Input shape {X.shape[1:]} != ({spec.p}, {spec.copies})")
        return X.reshape(X.shape[0], -1)
    if X.ndim == 2 and X.shape[1] == spec.input_width:
        return X
    raise ShapeError(f"Input shape {X.shape} does not match network input width {spec.input_width}")


def _covariate_block(spec: NetworkSpec, covariates, n: int) -> np.ndarray:
    if spec.n_covariates == 0:
        return np.zeros((n, 0))
    if covariates is None:
        raise ShapeError(f"Network expects {spec.n_covariates} covariates, none given")
    cov = np.asarray(covariates, dtype=np.float64).reshape(n, -1)
    if cov.shape[1] != spec.n_covariates:
        raise ShapeError(f"Covariate width {cov.shape[1]} != {spec.n_covariates}")
    return cov


def _lc_patches(layer: LayerSpec, a: np.ndarray) -> np.ndarray:
    extra = layer.padded_width - a.shape[1]
    if extra > 0:
        a = np.pad(a, ((0, 0), (0, extra)))
    return a[:, layer.patch_index()]


def _forward_cache(spec: NetworkSpec, state: ModelState, X, covariates):
    a = _flatten_input(spec, X)
    n = a.shape[0]
    cov = _covariate_block(spec, covariates, n)
    caches: List[_LayerCache] = []
    for layer, params in zip(spec.layers, state.params):
        if layer.kind == 'flatten':
            caches.append(_LayerCache(inp=a))
            continue
        if layer.kind == 'covariate_merge':
            caches.append(_LayerCache(inp=a))
            a = np.hstack([a, cov])
            continue
        if layer.kind == 'locally_connected':
            patches = _lc_patches(layer, a)
            z = np.einsum('ngk,gkc->ngc', patches, params['W']) + params['b']
            z = z.reshape(n, -1)
        else:
            patches = None
            z = a @ params['W'] + params['b']
        h, deriv = activation(layer.activation, z, layer.elu_alpha)
        ensure_finite(h, f"activations of layer {layer.name or layer.kind}")
        caches.append(_LayerCache(inp=a, deriv=deriv, patches=patches))
        a = h
    return a[:, 0], caches


def forward(spec: NetworkSpec, state: ModelState, X, covariates=None) -> np.ndarray:
    """Predictions, one per sample"""
    predictions, _ = _forward_cache(spec, state, X, covariates)
    return predictions


# ==================== backward ====================

def _backward(spec: NetworkSpec, state: ModelState, caches, d_out: np.ndarray,
              with_params: bool = True):
    """Reverse pass from dObjective/dPrediction. Returns (grads, d_input)."""
    grads: List[Optional[Dict[str, np.ndarray]]] = [None] * len(spec.layers)
    d_h = d_out.reshape(-1, 1)
    for idx in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[idx]
        cache = caches[idx]
        if layer.kind == 'flatten':
            continue
        if layer.kind == 'covariate_merge':
            d_h = d_h[:, :layer.input_width]
            continue
        params = state.params[idx]
        dz = d_h * cache.deriv
        n = dz.shape[0]
        if layer.kind == 'locally_connected':
            dz3 = dz.reshape(n, layer.n_groups, layer.channels)
            if with_params:
                grads[idx] = {
                    'W': np.einsum('ngk,ngc->gkc', cache.patches, dz3),
                    'b': dz3.sum(axis=0),
                }
            d_patch = np.einsum('ngc,gkc->ngk', dz3, params['W'])
            d_pad = np.zeros((n, layer.padded_width))
            index = layer.patch_index()
            for k in range(layer.group_size):
                d_pad[:, index[:, k]] += d_patch[:, :, k]
            d_h = d_pad[:, :layer.input_width]
        else:
            if with_params:
                grads[idx] = {'W': cache.inp.T @ dz, 'b': dz.sum(axis=0)}
            d_h = dz @ params['W'].T
    return grads, d_h


# ==================== losses and metrics ====================

def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ShapeError(f"Length mismatch: {y.shape[0]} targets vs {y_hat.shape[0]} predictions")
    if y.size == 0:
        raise ShapeError("Empty loss input")
    return y, y_hat


def _check_binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("BCE targets must be 0 or 1")


def loss(kind: str, y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    if kind == 'mse':
        value = float(np.mean((y - y_hat) ** 2))
    elif kind == 'bce':
        _check_binary(y)
        p = np.clip(y_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
        value = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
    else:
        raise ValidationError(f"Unknown loss: {kind}")
    if not math.isfinite(value):
        raise NumericalError("Non-finite loss")
    return value


def loss_gradient(kind: str, y, y_hat) -> np.ndarray:
    """dLoss/dPrediction"""
    y, y_hat = _check_pair(y, y_hat)
    n = y.size
    if kind == 'mse':
        return 2.0 * (y_hat - y) / n
    if kind == 'bce':
        inside = (y_hat > BCE_CLAMP) & (y_hat < 1.0 - BCE_CLAMP)
        p = np.clip(y_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
        return np.where(inside, (p - y) / (p * (1.0 - p)), 0.0) / n
    raise ValidationError(f"Unknown loss: {kind}")


def auc(positive_scores, negative_scores) -> float:
    """P(pos > neg) with ties counting one half (rank-sum form)"""
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("AUC needs at least one positive and one negative score")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def auc_from_labels(y, scores) -> float:
    y = np.asarray(y).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    return auc(scores[y == 1], scores[y == 0])


def head_loss_kind(spec: NetworkSpec) -> str:
    return 'bce' if spec.head == 'sigmoid' else 'mse'


# ==================== gradients ====================

def l1_penalty(spec: NetworkSpec, state: ModelState) -> float:
    total = 0.0
    for layer, params in zip(spec.layers, state.params):
        if layer.l1 > 0 and params is not None:
            total += layer.l1 * float(np.abs(params['W']).sum())
    return total


def backprop(spec: NetworkSpec, state: ModelState, X, covariates, y, loss_kind: str) -> BackpropResult:
    """Parameter gradients of loss + Σ l1·|W| (weights only)"""
    if loss_kind not in LOSS_KINDS:
        raise ValidationError(f"Unknown loss: {loss_kind}")
    if (loss_kind == 'bce') != (spec.head == 'sigmoid'):
        raise ValidationError(f"Loss {loss_kind} does not match head activation {spec.head}")
    y_hat, caches = _forward_cache(spec, state, X, covariates)
    value = loss(loss_kind, y, y_hat)
    grads, _ = _backward(spec, state, caches, loss_gradient(loss_kind, y, y_hat))
    for layer, params, grad in zip(spec.layers, state.params, grads):
        if layer.l1 > 0 and grad is not None:
            grad['W'] = grad['W'] + layer.l1 * np.sign(params['W'])
    return BackpropResult(loss=value, grads=grads)


def input_gradients(spec: NetworkSpec, state: ModelState, X, covariates=None) -> np.ndarray:
    """∂f(x_i)/∂x_{i,j,m} for every sample, shape n×p×(M+1)"""
    y_hat, caches = _forward_cache(spec, state, X, covariates)
    _, d_input = _backward(spec, state, caches, np.ones_like(y_hat), with_params=False)
    return d_input.reshape(-1, spec.p, spec.copies)


# ==================== optimiser ====================

def adam_step(state: ModelState, grads, lr: float, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> ModelState:
    """One bias-corrected Adam update; returns a new state"""
    if state.t < 0:
        raise ValidationError("Adam step counter must be non-negative")
    t = state.t + 1
    params, m_tree, v_tree = [], [], []
    for p, m, v, g in zip(state.params, state.m, state.v, grads):
        if p is None:
            params.append(None)
            m_tree.append(None)
            v_tree.append(None)
            continue
        new_p, new_m, new_v = {}, {}, {}
        for key, value in p.items():
            grad = g[key]
            if grad.shape != value.shape:
                raise ShapeError(f"Gradient shape {grad.shape} != parameter shape {value.shape}")
            ensure_finite(grad, "gradient")
            new_m[key] = beta1 * m[key] + (1.0 - beta1) * grad
            new_v[key] = beta2 * v[key] + (1.0 - beta2) * grad * grad
            m_hat = new_m[key] / (1.0 - beta1 ** t)
            v_hat = new_v[key] / (1.0 - beta2 ** t)
            new_p[key] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        params.append(new_p)
        m_tree.append(new_m)
        v_tree.append(new_v)
    return replace(state, params=params, m=m_tree, v=v_tree, t=t)
