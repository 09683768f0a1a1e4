# -*- coding: utf-8 -*-
"""
Shared fixtures for the test-suite
"""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from config.pipeline_config import PipelineConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def testing_config(tmp_path):
    """Tiny pipeline config rooted in a temporary output directory"""
    return PipelineConfig.from_dict({'output_dir': str(tmp_path), 'threads': 1}, profile='testing')


@pytest.fixture
def ar1_gaussian():
    """AR(1) Gaussian features with unit variance"""
    def make(n, p, rho, seed=0):
        gen = np.random.default_rng(seed)
        X = np.zeros((n, p))
        X[:, 0] = gen.standard_normal(n)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + np.sqrt(1 - rho ** 2) * gen.standard_normal(n)
        return X
    return make
