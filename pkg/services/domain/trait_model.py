#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Trait equations

Quantitative:  Y_i = X_i1 + C·f(β_1 g_1 + … + β_s g_s) + ε_i
Dichotomous:   logit(μ_i) = β_0 + X_i1 + C·f(β_1 g_1 + … + β_s g_s)
with f(x) = x² and β_j = a / sqrt(2 m_j (1 − m_j)).
"""
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit

from utils.errors import ConvergenceError, ValidationError


def burden_square(x):
    return np.square(x)


def effect_sizes(mafs: Sequence[float], variance_target: float,
                 variances: Optional[Sequence[float]] = None,
                 signs: Optional[Sequence[int]] = None) -> Tuple[float, np.ndarray]:
    """Solve a so that Σ β_j² var(g_j) equals the target exactly

    ``variances`` defaults to the Hardy–Weinberg 2m(1−m); pass empirical
    genotype variances for calibration on a realised sample.
    """
    m = np.asarray(mafs, dtype=np.float64)
    if variance_target <= 0:
        raise ValidationError("Variance target must be positive")
    if m.size == 0 or np.any((m <= 0) | (m >= 1)):
        raise ValidationError("Causal MAFs must lie in (0, 1)")
    hwe = 2.0 * m * (1.0 - m)
    var = hwe if variances is None else np.asarray(variances, dtype=np.float64)
    if var.shape != m.shape:
        raise ValidationError("variances and mafs differ in length")
    if np.any(var <= 0):
        raise ValidationError("Zero-variance causal variant")
    if signs is None:
        signs = np.ones(m.size)
        signs[0] = -1.0
    signs = np.asarray(signs, dtype=np.float64)
    if signs.shape != m.shape:
        raise ValidationError("sign pattern and mafs differ in length")
    a = math.sqrt(variance_target / float(np.sum(var / hwe)))
    beta = signs * a / np.sqrt(hwe)
    return a, beta


def genetic_term(genotypes, beta, scale: float) -> np.ndarray:
    burden = np.asarray(genotypes, dtype=np.float64) @ np.asarray(beta, dtype=np.float64)
    return scale * burden_square(burden)


def quantitative_trait(x1, genetic, noise) -> np.ndarray:
    return np.asarray(x1) + np.asarray(genetic) + np.asarray(noise)


def solve_intercept(linear_part, prevalence: float, bracket=(-60.0, 60.0),
                    xtol: float = 1e-12) -> float:
    """β_0 such that mean(expit(β_0 + η_i)) equals the prevalence"""
    eta = np.asarray(linear_part, dtype=np.float64)
    if not 0.0 < prevalence < 1.0:
        raise ValidationError("Prevalence must lie in (0, 1)")

    def gap(b0):
        return float(np.mean(expit(b0 + eta))) - prevalence

    lo, hi = bracket
    if gap(lo) * gap(hi) > 0:
        raise ConvergenceError(f"Cannot bracket intercept for prevalence {prevalence}",
                               payload={'bracket': list(bracket)})
    return float(bisect(gap, lo, hi, xtol=xtol, maxiter=500))


def logistic_mean(intercept: float, linear_part) -> np.ndarray:
    return expit(intercept + np.asarray(linear_part, dtype=np.float64))
