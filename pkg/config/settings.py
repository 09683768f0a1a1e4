#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Runtime configuration settings
Environment-driven defaults and named pipeline profiles
"""
import os

from dotenv import load_dotenv

load_dotenv()

# Base configuration
BASE_DIR = os.path.abspath(os.path.dirname(os.path.dirname(__file__)))

APP_TITLE = "hidemk"
VERSION = "0.3.0"


class RuntimeConfig:
    """Process-wide defaults, read once from the environment"""

    THREADS = int(os.environ.get("HIDEMK_THREADS", str(os.cpu_count() or 1)))
    LOG_LEVEL = os.environ.get("HIDEMK_LOG_LEVEL", "INFO").upper()
    OUTPUT_DIR = os.environ.get("HIDEMK_OUTPUT_DIR", os.path.join(BASE_DIR, "runs"))
    DEBUG = os.environ.get("HIDEMK_DEBUG", "False").lower() == "true"


# Simulation and training constants shared by the profiles
class ModelDefaults:
    SIGMA = 5
    THETA = 8
    DENSE_WIDTHS = (50,)
    LEARNING_RATE = 0.001
    BATCH_SIZE = 1024
    L1_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3)
    EPOCH_GRID = tuple(range(25, 81, 5))
    CV_FOLDS = 5
    CV_DRAWS = 25
    ENSEMBLE_SIZE = 10
    KNOCKOFFS = 5
    KNOCKOFF_WINDOW = 100


class SimulationDefaults:
    RHO = 0.7
    MAF_MIN = 0.005
    MAF_MAX = 0.5
    MAC_MIN = 10
    R_MAX = 0.75
    N_CAUSAL = 4
    VARIANCE_TARGET = {"quantitative": 0.06, "dichotomous": 0.2}
    PREVALENCE = 0.10
    BURDEN_SCALE = 2.0
    NOISE_VARIANCE = 2.0


DEFAULT_TARGET_FDRS = tuple(round(0.01 * k, 2) for k in range(1, 21))


# Profiles
class DeskProfile:
    """Desk-scale simulation study"""
    n = 2000
    p = 220
    replicates = 50
    cv_draws = 4
    ensemble_size = 10


class FullProfile:
    """Original study scale"""
    n = 10000
    p = 2000
    replicates = 200
    cv_draws = 25
    ensemble_size = 10


class TestingProfile:
    """Tiny sizes for the test-suite"""
    n = 300
    p = 30
    replicates = 2
    cv_draws = 1
    cv_folds = 2
    ensemble_size = 2
    epoch_grid = (5,)
    knockoff_window = 10
    dense_widths = (8,)
    target_fdrs = (0.1, 0.2)


profiles = {
    'desk': DeskProfile,
    'full': FullProfile,
    'testing': TestingProfile,
    'default': DeskProfile
}


def get_profile(profile_name=None):
    """Get profile overrides as a dict based on name or environment"""
    if profile_name is None:
        profile_name = os.environ.get('HIDEMK_PROFILE', 'default')

    profile = profiles.get(profile_name, profiles['default'])
    return {key: value for key, value in vars(profile).items() if not key.startswith('_')}
