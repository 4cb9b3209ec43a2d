"""
Shared fixtures: seeded generators, small universes and tuples with known models.
"""

import numpy as np
import pytest

from orbitframe.lattice import Mode, make_universe
from orbitframe.presets import full_riesz, geometric_diag, monomial_fibers
from orbitframe.settings import Tolerances

SEED = 20240611


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def tol():
    return Tolerances()


@pytest.fixture
def unilateral_universe():
    return make_universe(Mode.UNILATERAL, 4, 3, 2)


@pytest.fixture
def bilateral_universe():
    return make_universe(Mode.BILATERAL, 3, 4, 1)


@pytest.fixture
def riesz_tuple():
    return full_riesz(4, 3, 1)


@pytest.fixture
def geometric_tuple():
    return geometric_diag(50)


@pytest.fixture
def monomial_base():
    """Single-generator basic tuple with fiber dims [1, 2, 1, 3]; its model subspace Q."""
    return monomial_fibers(4, 3, 1, [1, 2, 1, 3])


@pytest.fixture
def two_generator_base():
    t, _ = monomial_fibers(2, 2, 2, [1, 2])
    return t


def well_conditioned(rng: np.random.Generator, d: int, cond: float = 100.0) -> np.ndarray:
    """Random complex d x d matrix with singular values spread over [1, cond]."""
    def unitary():
        Z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        Q, R = np.linalg.qr(Z)
        return Q * (np.diag(R) / np.abs(np.diag(R)))

    s = np.geomspace(1.0, cond, d)
    return unitary() @ np.diag(s) @ unitary()


def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    return well_conditioned(rng, d, cond=1.0)


@pytest.fixture
def make_map(rng):
    def factory(d: int, cond: float = 100.0) -> np.ndarray:
        return well_conditioned(rng, d, cond)
    return factory
