"""
Shared fixtures for the RoughLik test-suite
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""

import os

os.environ.setdefault('ROUGHLIK_CONFIG', 'testing')

import numpy as np
import pytest

from roughlik.config import TestingConfig
from roughlik.models import get_field
from roughlik.utils.fbm_model import FbmIncrementModel
from roughlik.utils.fou_reference import FouParams, fou_forward
from roughlik.utils.grid_path import dyadic_grid
from roughlik.utils.inverse_ito import NewtonOptions


@pytest.fixture
def config_class():
    return TestingConfig


@pytest.fixture
def newton_options():
    return NewtonOptions.from_config(TestingConfig)


@pytest.fixture
def fou_field():
    return get_field('fou')


@pytest.fixture
def nonlinear_field():
    return get_field('nonlinear2d')


def simulate_fou(level, T=1.0, lam=1.0, sigma=1.0, h=0.5, seed=0, y0=0.0):
    """fOU observations from a seeded fBm driver through the closed-form forward map"""
    partition = dyadic_grid(level, T)
    driver = FbmIncrementModel(h, partition).sample(seed)
    params = FouParams.on_grid(lam, sigma, partition, h)
    return fou_forward(driver, y0, params), driver


@pytest.fixture
def fou_data():
    """64 intervals on [0, 1], lam = sigma = 1, Brownian driver"""
    obs, _ = simulate_fou(6, seed=7)
    return obs


@pytest.fixture
def rng():
    return np.random.default_rng(20251103)
