import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def mc_close(estimate, target, se, k=4.0):
    """``|estimate - target| <= k * se``, elementwise."""
    estimate, target, se = (np.asarray(v, dtype=float) for v in (estimate, target, se))
    return bool(np.all(np.abs(estimate - target) <= k * se))
