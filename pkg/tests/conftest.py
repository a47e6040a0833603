import numpy as np
import pytest
from fractions import Fraction

from soundsmooth.exact_tables import GridSpec, build_table


@pytest.fixture(scope="session")
def tiny_spec():
    # intensities 0..4, clamp margin 2 steps, sigma of 4 steps, 8-bit draws
    return GridSpec(L=4, k=2, sigma=1, n_bits=8)


@pytest.fixture(scope="session")
def tiny_table(tiny_spec):
    return build_table(tiny_spec)


@pytest.fixture(scope="session")
def half_sigma_table():
    return build_table(GridSpec.normalized(255, 6, Fraction(1, 2), 64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
