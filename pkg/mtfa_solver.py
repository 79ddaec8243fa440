"""Minimum trace factor analysis: min tr(R) s.t. R psd, D diagonal psd, Sigma = R + D, solved by operator splitting"""

import datetime
import logging
import time
from dataclasses import dataclass, field

import humanize
import numpy as np

import consts
from errors import MaxIterations, NotPositiveDefinite
from symmat import SymMat, is_pd

_DEFAULTS = consts.DEFAULTS['mtfa']


@dataclass
class MtfaOptions:
    tol: float = _DEFAULTS['tol']
    max_iter: int = _DEFAULTS['max_iter']
    rho: float = _DEFAULTS['rho']
    balance_ratio: float = _DEFAULTS['balance_ratio']
    balance_factor: float = _DEFAULTS['balance_factor']
    log_every: int = _DEFAULTS['log_every']
    strict: bool = False


@dataclass(frozen=True)
class MtfaSolution:
    R: SymMat
    D: SymMat
    trace_R: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    # Y, the multiplier of R + D = Sigma; Lambda = I + Y certifies optimality
    multiplier: SymMat = field(repr=False)
    rho: float = 1.0


def _psd_soft_threshold(a, shift):
    w, v = np.linalg.eigh(a)
    w = np.maximum(w - shift, 0.0)
    keep = w > 0.0
    if not np.any(keep):
        return np.zeros_like(a)
    v = v[:, keep]
    r = (v * w[keep]) @ v.T
    return 0.5 * (r + r.T)


def _r_side_multiplier(u, d_prev, d, rho):
    # exact R-update multiplier: I + Y is psd and orthogonal to R by construction of the projection
    return rho * (u + np.diag(d_prev - d))


def solve_mtfa(sigma, opts=None):
    if opts is None:
        opts = MtfaOptions()
    if opts.max_iter < 1:
        raise ValueError(f'max_iter must be at least 1, got {opts.max_iter}')
    if not is_pd(sigma):
        raise NotPositiveDefinite('MTFA needs a positive definite covariance matrix')

    started = time.perf_counter()
    s = sigma.array
    n = sigma.n
    scale = 1.0 + np.linalg.norm(s)
    threshold = opts.tol * scale
    rho = opts.rho

    d = np.diag(s).copy()
    u = np.zeros((n, n))
    r = np.zeros((n, n))
    primal = dual = np.inf
    best = None
    iteration = 0
    logging.info(f'Running MTFA splitting solver: n={n}, tol={opts.tol:g}, max_iter={opts.max_iter}')

    for iteration in range(1, opts.max_iter + 1):
        r = _psd_soft_threshold(s - np.diag(d) - u, 1.0 / rho)
        d_prev = d
        d = np.maximum(np.diag(s - r - u), 0.0)
        mismatch = r + np.diag(d) - s
        u = u + mismatch

        primal = float(np.linalg.norm(mismatch))
        dual = float(rho * np.linalg.norm(d - d_prev))
        worst = max(primal, dual)
        if best is None or worst < best[0]:
            best = (worst, r, d, _r_side_multiplier(u, d_prev, d, rho), primal, dual, iteration, rho)

        if iteration % opts.log_every == 0:
            logging.debug(f'MTFA iteration {iteration}: primal={primal:.3e}, dual={dual:.3e}, '
                          f'rho={rho:.3e}, tr(R)={np.trace(r):.6g}')
        if worst <= threshold:
            break

        if primal > opts.balance_ratio * dual:
            rho *= opts.balance_factor
            u /= opts.balance_factor
        elif dual > opts.balance_ratio * primal:
            rho /= opts.balance_factor
            u *= opts.balance_factor

    converged = max(primal, dual) <= threshold
    if converged:
        y = _r_side_multiplier(u, d_prev, d, rho)
        result_r, result_d, result_primal, result_dual, result_iteration = r, d, primal, dual, iteration
    else:
        _, result_r, result_d, y, result_primal, result_dual, result_iteration, rho = best

    solution = MtfaSolution(R=SymMat.from_array(result_r),
                            D=SymMat.diagonal(result_d),
                            trace_R=float(np.trace(result_r)),
                            iterations=iteration,
                            primal_residual=result_primal,
                            dual_residual=result_dual,
                            converged=converged,
                            multiplier=SymMat.symmetrized(y),
                            rho=rho)

    elapsed = humanize.precisedelta(datetime.timedelta(seconds=time.perf_counter() - started),
                                    minimum_unit='milliseconds')
    if converged:
        logging.info(f'MTFA converged in {iteration} iterations ({elapsed}): tr(R)={solution.trace_R:.8g}')
    else:
        message = (f'MTFA did not converge in {opts.max_iter} iterations ({elapsed}); '
                   f'returning iterate {result_iteration} with primal={result_primal:.3e}, dual={result_dual:.3e}')
        if opts.strict:
            raise MaxIterations(message, result=solution)
        logging.warning(message)
    return solution


def mtfa_certificate(solution, tol=1e-6):
    """Checks Lambda = I + Y psd, Gamma = diag(Y) >= 0 and tr(Lambda R) = 0 for a returned solution"""
    n = solution.R.n
    lam = np.eye(n) + solution.multiplier.array
    min_eig_lambda = float(np.min(np.linalg.eigvalsh(lam)))
    complementarity = abs(float(np.sum(lam * solution.R.array)))
    trace_r = solution.trace_R
    relative_complementarity = complementarity / trace_r if trace_r > 0 else complementarity
    min_gamma = float(np.min(solution.multiplier.diag()))
    scale = 1.0 + (solution.R + solution.D).max_abs()
    passed = (min_eig_lambda >= -tol * scale and min_gamma >= -tol * scale
              and complementarity <= tol * max(trace_r, 1.0))
    return {
        'min_eig_lambda': min_eig_lambda,
        'min_gamma': min_gamma,
        'complementarity': complementarity,
        'relative_complementarity': relative_complementarity,
        'passed': passed,
    }


def singular_value_report(m, k=_DEFAULTS['report_k']):
    """Top-k singular values of a symmetric matrix (absolute eigenvalues), nonincreasing"""
    if not 0 < k <= m.n:
        raise ValueError(f'k must lie in [1, {m.n}], got {k}')
    values = np.sort(np.abs(np.linalg.eigvalsh(m.array)))[::-1]
    return values[:k].copy()


def spectral_ratio(values, r):
    """sigma_{r+1} / sigma_r, the drop after the r-th singular value"""
    if r < 1 or r >= len(values):
        raise ValueError(f'Need 1 <= r < {len(values)}, got {r}')
    if values[r - 1] == 0:
        return float('nan')
    return float(values[r] / values[r - 1])
