import numpy as np
import pytest

from momentdd.pauli import SINGLE_QUBIT_GROUP


@pytest.fixture
def group():
    return SINGLE_QUBIT_GROUP


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
