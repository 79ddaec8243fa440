import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from estimation import CovarianceEstimate  # noqa: E402
from symmat import SymMat  # noqa: E402


def random_pd(rng, n, condition=10.0):
    """Random SPD matrix with eigenvalues spread over [1, condition]"""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.linspace(1.0, condition, n)
    rng.shuffle(w)
    return SymMat.symmetrized((q * w) @ q.T)


def factor_covariance(rng, n, r, noise=(0.2, 1.0)):
    """A A^T + diag(b^2): a covariance with an exact r-factor structure"""
    a = rng.standard_normal((n, r))
    b = rng.uniform(noise[0], noise[1], n)
    return SymMat.symmetrized(a @ a.T + np.diag(b ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def pd_factory(rng):
    def make(n, condition=10.0):
        return random_pd(rng, n, condition)
    return make


@pytest.fixture
def estimate_factory(rng):
    def make(n, r=None, n_samples=None):
        sigma = random_pd(rng, n) if r is None else factor_covariance(rng, n, r)
        return CovarianceEstimate.from_sigma_hat(sigma, n_samples=n_samples)
    return make


@pytest.fixture
def small_estimate():
    return CovarianceEstimate.from_sigma_hat(SymMat.from_array([[2.0, 1.0], [1.0, 2.0]]))
