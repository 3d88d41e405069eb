import numpy as np
import pytest

from gllab import gaussian_potential, quartic_potential


@pytest.fixture(scope="session")
def gaussian():
    return gaussian_potential()


@pytest.fixture(scope="session")
def quartic():
    # a=1, b=1: strictly convex, light tails, normalization nontrivial
    return quartic_potential(1.0, 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
