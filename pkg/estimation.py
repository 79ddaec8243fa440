"""Sample covariance, Gaussian Kullback-Leibler divergence and the tolerance ceiling delta_max"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

import consts
from errors import (DegenerateTolerance, DeltaTooLarge, DimensionMismatch, InvalidTolerance,
                    NotPositiveDefinite, SingularCovariance)
from symmat import SymMat, inner, inv_pd, is_pd, logdet_pd


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sigma_hat together with its cached inverse and log-determinant"""
    n: int
    n_samples: Optional[int]
    sigma_hat: SymMat
    sigma_hat_inv: SymMat
    logdet_sigma_hat: float

    @classmethod
    def from_sigma_hat(cls, sigma_hat, n_samples=None):
        if not isinstance(sigma_hat, SymMat):
            sigma_hat = SymMat.from_array(sigma_hat)
        if n_samples is not None and n_samples < 1:
            raise ValueError(f'Sample count must be positive, got {n_samples}')
        try:
            logdet = logdet_pd(sigma_hat)
        except NotPositiveDefinite as e:
            raise SingularCovariance(
                'Sample covariance is not positive definite; use more samples than variables '
                'or pass a ridge term (--ridge)') from e
        return cls(n=sigma_hat.n,
                   n_samples=n_samples,
                   sigma_hat=sigma_hat,
                   sigma_hat_inv=inv_pd(sigma_hat),
                   logdet_sigma_hat=logdet)


@dataclass(frozen=True)
class Tolerance:
    delta: float
    delta_max: float
    fraction: float


class DeltaMax(NamedTuple):
    delta_max: float
    sigma_d: SymMat


def sample_covariance(data, center=False, unbiased=False, ridge=0.0):
    """(1/N) sum_k x_k x_k^T over the columns of the n x N `data` matrix"""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DimensionMismatch(f'Data must be an n x N matrix, got shape {data.shape}')
    n, n_samples = data.shape
    if n_samples < 1:
        raise ValueError('At least one sample is needed')
    if not np.all(np.isfinite(data)):
        raise ValueError('Data contains non-finite values')
    if ridge < 0:
        raise ValueError(f'Ridge term must be nonnegative, got {ridge}')

    if center:
        data = data - data.mean(axis=1, keepdims=True)
    denominator = n_samples - 1 if unbiased else n_samples
    if denominator < 1:
        raise SingularCovariance('The unbiased estimator needs at least two samples')

    effective_samples = n_samples - 1 if center else n_samples
    if ridge == 0.0 and (effective_samples < n or np.linalg.matrix_rank(data) < n):
        raise SingularCovariance(
            f'Sample covariance of {n} variables from {n_samples} samples is singular; '
            'collect more data or pass a ridge term (--ridge)')

    sigma_hat = (data @ data.T) / denominator
    if ridge > 0.0:
        sigma_hat = sigma_hat + ridge * np.eye(n)
    logging.debug(f'Sample covariance: n={n}, N={n_samples}, center={center}, unbiased={unbiased}, ridge={ridge}')
    return CovarianceEstimate.from_sigma_hat(SymMat.symmetrized(sigma_hat), n_samples=n_samples)


def kl_divergence(sigma, est):
    """D_KL(Sigma || Sigma_hat) = 1/2 (-log|Sigma| + log|Sigma_hat| + tr(Sigma Sigma_hat^-1) - n)"""
    if sigma.n != est.n:
        raise DimensionMismatch(f'Sigma is {sigma.n}x{sigma.n} but Sigma_hat is {est.n}x{est.n}')
    return 0.5 * (-logdet_pd(sigma) + est.logdet_sigma_hat + inner(sigma, est.sigma_hat_inv) - est.n)


def kl_ball_contains(sigma, est, delta):
    if not is_pd(sigma):
        return False
    return 2.0 * kl_divergence(sigma, est) <= delta


def delta_max(est):
    """Closed-form ceiling log|[S^-1 - chi(S^-1)] S| and the diagonal matrix attaining the minimal divergence.

    delta_max equals twice the minimal divergence D_KL(Sigma_D || Sigma_hat) over diagonal Sigma_D.
    """
    gamma = est.sigma_hat_inv.diag()
    if np.any(gamma <= 0):
        raise NotPositiveDefinite('Inverse sample covariance has a nonpositive diagonal entry')
    sigma_d = SymMat.diagonal(1.0 / gamma)
    # [S^-1 - chi(S^-1)] is diag(gamma), so the log-determinant splits
    value = float(np.sum(np.log(gamma))) + est.logdet_sigma_hat
    return DeltaMax(delta_max=max(value, 0.0), sigma_d=sigma_d)


def make_tolerance(est, fraction=consts.DEFAULTS['estimation']['delta_fraction']):
    if not 0.0 < fraction < 1.0:
        raise InvalidTolerance(f'delta fraction must lie in (0, 1), got {fraction}')
    ceiling = delta_max(est).delta_max
    if ceiling <= consts.DEFAULTS['estimation']['degenerate_delta_max']:
        raise DegenerateTolerance(
            f'delta_max={ceiling:.3e}: the sample covariance is (numerically) diagonal, '
            'so there is no nontrivial factor structure to recover')
    return Tolerance(delta=fraction * ceiling, delta_max=ceiling, fraction=fraction)


def tolerance_from_delta(est, delta):
    if delta <= 0:
        raise InvalidTolerance(f'delta must be positive, got {delta}')
    ceiling = delta_max(est).delta_max
    if delta >= ceiling:
        raise DeltaTooLarge(f'delta={delta:.6g} is not below delta_max={ceiling:.6g}; '
                            'the trivial solution R = 0 would be optimal')
    return Tolerance(delta=delta, delta_max=ceiling, fraction=delta / ceiling)


def sample_size_tolerance(est, cap_fraction=0.9):
    """delta = n(n+1)/(2N): the large-sample mean of 2 D_KL(Sigma || Sigma_hat), capped below delta_max"""
    if est.n_samples is None:
        raise InvalidTolerance('The sample-size rule for delta needs the number of samples')
    ceiling = delta_max(est).delta_max
    if ceiling <= consts.DEFAULTS['estimation']['degenerate_delta_max']:
        raise DegenerateTolerance(f'delta_max={ceiling:.3e}: no nontrivial factor structure to recover')
    delta = min(est.n * (est.n + 1) / (2.0 * est.n_samples), cap_fraction * ceiling)
    return Tolerance(delta=delta, delta_max=ceiling, fraction=delta / ceiling)
