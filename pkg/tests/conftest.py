"""Shared fixtures: small datasets so the per-module tests stay quick."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from faultlab.config import SimConfig
from faultlab.simgen import generate_dataset

settings.register_profile(
    "faultlab",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("faultlab")


@pytest.fixture(scope="session")
def small_cfg() -> SimConfig:
    # 3000 points is enough for a handful of benign excursions and, in the
    # mixed regime, a few fault windows of every kind we assert on.
    return SimConfig(seed=7, n_points=3000, fault_rate=0.08)


@pytest.fixture(scope="session")
def normal_small(small_cfg):
    return generate_dataset("normal_only", small_cfg)


@pytest.fixture(scope="session")
def mixed_small(small_cfg):
    return generate_dataset("mixed", small_cfg)


@pytest.fixture(scope="session")
def anomaly_small(small_cfg):
    return generate_dataset("anomaly_only", small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
