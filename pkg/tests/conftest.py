import numpy as np
import pytest

from groupdistil import GroupShiftSpec, generate


@pytest.fixture(scope="session")
def benchmark():
    """The default shifted-group benchmark (train, test), generated once."""
    return generate(GroupShiftSpec())


@pytest.fixture(scope="session")
def small_benchmark():
    """A cut-down benchmark for fast training tests."""
    return generate(GroupShiftSpec(n_train=400, n_test_per_group=50, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
