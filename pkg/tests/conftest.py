import numpy as np
import pytest


def finite_diff(f, x, step=1e-4):
    """Central-difference gradient of a scalar function at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        down = flat.copy()
        down[i] -= step
        out[i] = (f(up.reshape(x.shape)) - f(down.reshape(x.shape))) / (2 * step)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-3, atol=1e-6):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
