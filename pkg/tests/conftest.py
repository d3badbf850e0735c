import numpy as np
import pytest

import reviewlab as rl


@pytest.fixture(scope="session")
def binary_model() -> rl.ModelSpec:
    """Two-quality additive market: theta ~ N(0,1), eps ~ N(0,0.5), price 0.5."""
    return rl.binary_gaussian_model()


@pytest.fixture(scope="session")
def classic_model() -> rl.ModelSpec:
    """Quality uniform on [0,1], 129-point grid, theta/eps ~ N(0,1), price 0."""
    return rl.interval_gaussian_model()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240810)
