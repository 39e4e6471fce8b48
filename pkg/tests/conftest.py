import numpy as np
import pytest


@pytest.fixture
def gen():
    """Fresh deterministic generator per test."""
    return np.random.default_rng(1234)
