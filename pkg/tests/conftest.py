import numpy as np
import pytest

import gmixpost as gp


def random_model(rng, d, m, noise="diag"):
    """Random well-conditioned linear-Gaussian model."""
    forward = rng.standard_normal((m, d))
    data = rng.standard_normal(m)
    if noise == "scalar":
        cov = float(rng.uniform(0.3, 2.0))
    elif noise == "diag":
        cov = rng.uniform(0.3, 2.0, m)
    else:
        root = rng.standard_normal((m, m))
        cov = root @ root.T + m * np.eye(m)
    return gp.LinearGaussianModel(forward, cov, data)


def random_spd(rng, n, scale=1.0):
    root = rng.standard_normal((n, n))
    return scale * (root @ root.T + n * np.eye(n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240)
