import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def worked_pair_tensor():
    """The (2, 1, 2) instance threading through the module examples:
    a(0,0) = [10, 0], a(1,0) = [0, 6], threshold 4."""
    t = np.zeros((2, 1, 2))
    t[0, 0, 0] = 10.0
    t[1, 0, 1] = 6.0
    return t


@pytest.fixture
def worked_triple_tensor():
    """The (1, 1, 3) instance with data [5, 4, 0] and mean 3."""
    return np.array([5.0, 4.0, 0.0]).reshape(1, 1, 3)
