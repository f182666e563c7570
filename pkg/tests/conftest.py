import numpy as np
import pytest

from zakai_mimc.coupling import BaseMesh
from zakai_mimc.spde import ModelParams


@pytest.fixture(scope="session")
def params():
    """Baseline model parameters of the numerical experiments."""
    return ModelParams(mu=0.081, rho=0.2, T=5.0, x0=5.0)


@pytest.fixture(scope="session")
def base():
    """Baseline mesh: domain (-10, 20), h0 = 1, k0 = 1/4."""
    return BaseMesh(x_min=-10.0, x_max=20.0, h0=1.0, k0=0.25)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
