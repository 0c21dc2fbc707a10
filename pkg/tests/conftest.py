"""Shared fixtures: small grids and deterministic band-limited fields."""
import numpy as np
import pytest

from chnslab.grid import GridSpec, random_scalar, random_solenoidal
from chnslab.integrator import State
from chnslab.operators import Params, double_well


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16, 16, 2.0 * np.pi)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32, 32, 2.0 * np.pi)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(64, 64, 2.0 * np.pi)


@pytest.fixture(scope="session")
def pot():
    return double_well()


@pytest.fixture(scope="session")
def params():
    return Params(nu=1.0, mobility=1.0, capillary=1.0, R=0.0)


def smooth_state(g: GridSpec, seed: int, amp_phi: float = 0.2,
                 amp_u: float = 0.1, t: float = 0.0) -> State:
    """Band-limited random state with both fields active."""
    rng = np.random.default_rng(seed)
    cutoff = max(1, min(g.nx, g.ny) // 8)
    phi = random_scalar(g, rng, cutoff, amplitude=amp_phi)
    u = random_solenoidal(g, rng, cutoff, amplitude=amp_u)
    return State(t, phi, u)
