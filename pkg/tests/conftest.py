import numpy as np
import pytest

from miscible.mesh import build_uniform_mesh


@pytest.fixture(scope="session")
def mesh4():
    return build_uniform_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_uniform_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
