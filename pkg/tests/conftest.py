import numpy as np
import pytest

from scoredensity.rng import stream


@pytest.fixture
def rng(request):
    # one stream per test, keyed by the test name
    return stream(20240, request.node.name)


def fd_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g
