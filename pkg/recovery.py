"""Recovers the primal optimum (Sigma*, R*, D*) from the dual solution through the complementary slackness conditions"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

import consts
from dual_solver import dual_objective_multipliers
from errors import DimensionMismatch, EmptyKernel, InconsistentSystem, IndefiniteQ
from estimation import kl_divergence
from symmat import SymMat, chi, eig_sym, inner, inv_pd, logdet_pd, numerical_rank

_DEFAULTS = consts.DEFAULTS['recovery']


@dataclass
class RecoveryOptions:
    kernel_rel_tol: float = _DEFAULTS['kernel_rel_tol']
    act_tol: float = _DEFAULTS['act_tol']
    proj_tol: float = _DEFAULTS['proj_tol']
    inconsistency_tol: float = _DEFAULTS['inconsistency_tol']
    nonunique_tol: float = _DEFAULTS['nonunique_tol']
    rank_rel_tol: float = _DEFAULTS['rank_rel_tol']
    cert_tol: float = _DEFAULTS['cert_tol']
    allow_trivial: bool = True


@dataclass(frozen=True)
class KernelBasis:
    u_tilde: np.ndarray
    r: int
    spectrum: np.ndarray
    threshold: float


@dataclass(frozen=True)
class QSolution:
    Q: np.ndarray
    R: SymMat
    residual: float
    non_unique: bool
    system_rank: int
    n_equations: int
    projected: bool


@dataclass(frozen=True)
class CertReport:
    c1: float
    c2: float
    c3: float
    gap: float
    boundary: float
    raw: Dict[str, float]
    tol: float
    passed: bool


@dataclass(frozen=True)
class Decomposition:
    Sigma: SymMat
    R: SymMat
    D: SymMat
    rank_R: int
    duality_gap: float
    kkt: Dict[str, float]
    kl_to_sigma_hat: float
    loadings: np.ndarray = field(repr=False)
    lambda_spectrum: np.ndarray = field(repr=False)
    kernel_dim: int = 0
    non_unique: bool = False
    q_residual: float = 0.0
    offdiag_residual: float = 0.0
    certificate: CertReport = None


def recover_sigma(sol, est):
    """Sigma* = (Sigma_hat^-1 + X*/lambda*)^-1, the minimizer of the Lagrangian in Sigma"""
    if not sol.converged:
        logging.warning('Recovering Sigma from a dual solution that did not converge')
    if sol.point.W.n != est.n:
        raise DimensionMismatch(f'Dual solution is {sol.point.W.n}x{sol.point.W.n}, estimate is {est.n}x{est.n}')
    return inv_pd(sol.point.W)


def lambda_matrix(sol):
    """Lambda = I + Gamma* - Theta* = I - X*"""
    return SymMat.identity(sol.point.X.n) + sol.gamma - sol.theta


def kernel_basis(lambda_mat, rel_tol=_DEFAULTS['kernel_rel_tol'], allow_empty=True):
    """Orthonormal basis of the numerical kernel of Lambda (eigenvalues below rel_tol * ||Lambda||_2)"""
    if rel_tol <= 0:
        raise ValueError(f'rel_tol must be positive, got {rel_tol}')
    spectral = eig_sym(lambda_mat)
    norm = float(np.max(np.abs(spectral.eigenvalues)))
    threshold = rel_tol * max(norm, consts.DEFAULTS['symmat']['rank_floor'])
    in_kernel = spectral.eigenvalues <= threshold
    u_tilde = spectral.eigenvectors[:, in_kernel]
    r = int(u_tilde.shape[1])
    logging.info(f'Kernel of Lambda: dimension {r} at threshold {threshold:.3e}')
    if r == 0 and not allow_empty:
        raise EmptyKernel('Lambda has no numerical kernel, so R* = 0 (trivial decomposition)')
    return KernelBasis(u_tilde=u_tilde, r=r, spectrum=spectral.eigenvalues, threshold=threshold)


def _vech_pairs(r):
    return [(a, b) for a in range(r) for b in range(a, r)]


def _system_matrix(u_tilde, eq_rows, eq_cols):
    r = u_tilde.shape[1]
    pairs = _vech_pairs(r)
    system = np.empty((eq_rows.size, len(pairs)))
    left = u_tilde[eq_rows, :]
    right = u_tilde[eq_cols, :]
    for k, (a, b) in enumerate(pairs):
        if a == b:
            system[:, k] = left[:, a] * right[:, a]
        else:
            system[:, k] = left[:, a] * right[:, b] + left[:, b] * right[:, a]
    return system, pairs


def solve_for_Q(u_tilde, sigma_star, gamma, opts=None):
    """Least-squares solution of chi(U Q U^T) = chi(Sigma*) plus (Sigma* - U Q U^T)_ii = 0 where gamma_i is active"""
    if opts is None:
        opts = RecoveryOptions()
    u_tilde = np.asarray(u_tilde, dtype=float)
    n, r = u_tilde.shape
    if r < 1:
        raise ValueError('solve_for_Q needs a kernel of dimension at least 1')
    if sigma_star.n != n or gamma.n != n:
        raise DimensionMismatch('U_tilde, Sigma* and Gamma must share the dimension n')

    off_rows, off_cols = np.triu_indices(n, 1)
    active = np.flatnonzero(gamma.diag() > opts.act_tol)
    eq_rows = np.concatenate([off_rows, active])
    eq_cols = np.concatenate([off_cols, active])
    system, pairs = _system_matrix(u_tilde, eq_rows, eq_cols)
    rhs = sigma_star.array[eq_rows, eq_cols]

    if system.shape[0] == 0:
        q = np.zeros(len(pairs))
        system_rank = 0
        non_unique = True
        residual = 0.0
    else:
        q, _, system_rank, singular_values = np.linalg.lstsq(system, rhs, rcond=None)
        non_unique = system_rank < len(pairs) or bool(
            singular_values.size and singular_values[-1] < opts.nonunique_tol * singular_values[0])
        residual = float(np.max(np.abs(system @ q - rhs)))

    scale = sigma_star.max_abs()
    if residual > opts.inconsistency_tol * scale:
        raise InconsistentSystem(f'Q system residual {residual:.3e} exceeds {opts.inconsistency_tol:g} * '
                                 f'||Sigma*||_inf; the dual solution is probably not accurate enough')

    q_matrix = np.zeros((r, r))
    for value, (a, b) in zip(q, pairs):
        q_matrix[a, b] = value
        q_matrix[b, a] = value

    w, v = np.linalg.eigh(q_matrix)
    floor = opts.proj_tol * max(1.0, float(np.max(np.abs(w))))
    projected = False
    if w[0] < -floor:
        if not non_unique:
            raise IndefiniteQ(f'Q has eigenvalue {w[0]:.3e} below -{floor:.1e}; '
                              'the dual solution is probably not accurate enough')
        logging.warning(f'Minimum-norm Q is indefinite (min eigenvalue {w[0]:.3e}) and the system is not unique')
    elif w[0] < 0:
        q_matrix = (v * np.maximum(w, 0.0)) @ v.T
        q_matrix = 0.5 * (q_matrix + q_matrix.T)
        projected = True

    if non_unique:
        logging.warning(f'Q system is rank deficient ({system_rank} of {len(pairs)} unknowns determined); '
                        'returning the minimum-norm solution')
    r_matrix = u_tilde @ q_matrix @ u_tilde.T
    return QSolution(Q=q_matrix,
                     R=SymMat.symmetrized(r_matrix),
                     residual=residual,
                     non_unique=non_unique,
                     system_rank=int(system_rank),
                     n_equations=int(system.shape[0]),
                     projected=projected)


def lagrangian(R, Sigma, lam, Lambda, Gamma, Theta, est, delta):
    """tr(R) + lam(-log|Sigma| + log|S| - n + tr(S^-1 Sigma) - delta) - tr(Lambda R)
    - tr(Gamma(Sigma-R)) + tr(chi(Theta)(Sigma-R))
    """
    divergence_term = -logdet_pd(Sigma) + est.logdet_sigma_hat - est.n + inner(est.sigma_hat_inv, Sigma) - delta
    difference = Sigma - R
    return (R.trace() + lam * divergence_term - inner(Lambda, R) - inner(Gamma, difference)
            + inner(chi(Theta), difference))


def certify(dec, sol, est, delta, tol=_DEFAULTS['cert_tol']):
    """Complementary slackness residuals, duality gap and KL boundary activity, normalized by 1 + tr(R)"""
    lam = lambda_matrix(sol)
    difference = dec.Sigma - dec.R
    trace_r = dec.R.trace()
    raw = {
        'c1': abs(inner(lam, dec.R)),
        'c2': abs(inner(sol.gamma, difference)),
        'c3': abs(inner(sol.theta, difference)),
        'gap': abs(trace_r - dual_objective_multipliers(sol.point.lam, sol.gamma, sol.theta, est, delta)),
        'boundary': abs(2.0 * kl_divergence(dec.Sigma, est) - delta),
    }
    norm = 1.0 + abs(trace_r)
    normalized = {key: value / norm for key, value in raw.items()}
    passed = all(value <= tol for value in normalized.values())
    if not passed:
        failing = ', '.join(f'{key}={value:.2e}' for key, value in normalized.items() if value > tol)
        logging.warning(f'Certification failed: {failing}')
    return CertReport(tol=tol, raw=raw, passed=passed, **normalized)


def _loadings(u_tilde, q_matrix):
    w, v = np.linalg.eigh(q_matrix)
    root = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    return u_tilde @ root


def recover(sol, est, delta, opts=None):
    """Sigma* from the stationarity condition, R* = U Q U^T on the kernel of Lambda, D* = diag(Sigma* - R*)"""
    if opts is None:
        opts = RecoveryOptions()
    n = est.n
    sigma_star = recover_sigma(sol, est)
    basis = kernel_basis(lambda_matrix(sol), opts.kernel_rel_tol, allow_empty=opts.allow_trivial)

    if basis.r == 0:
        r_star = SymMat.zeros(n)
        loadings = np.zeros((n, 0))
        non_unique, q_residual = False, 0.0
    else:
        q_solution = solve_for_Q(basis.u_tilde, sigma_star, sol.gamma, opts)
        r_star = q_solution.R
        loadings = _loadings(basis.u_tilde, q_solution.Q)
        non_unique, q_residual = q_solution.non_unique, q_solution.residual

    difference = sigma_star - r_star
    d_star = SymMat.diagonal(difference.diag())
    decomposition = Decomposition(Sigma=sigma_star,
                                  R=r_star,
                                  D=d_star,
                                  rank_R=numerical_rank(r_star, opts.rank_rel_tol),
                                  duality_gap=0.0,
                                  kkt={},
                                  kl_to_sigma_hat=kl_divergence(sigma_star, est),
                                  loadings=loadings,
                                  lambda_spectrum=basis.spectrum,
                                  kernel_dim=basis.r,
                                  non_unique=non_unique,
                                  q_residual=q_residual,
                                  offdiag_residual=chi(difference).max_abs())
    report = certify(decomposition, sol, est, delta, opts.cert_tol)
    decomposition = dataclasses.replace(decomposition,
                                        duality_gap=report.raw['gap'],
                                        kkt={'c1': report.c1, 'c2': report.c2, 'c3': report.c3},
                                        certificate=report)
    logging.info(f'Recovered decomposition: rank(R)={decomposition.rank_R}, tr(R)={r_star.trace():.8g}, '
                 f'gap={report.raw["gap"]:.3e}, certified={report.passed}')
    return decomposition


def primal_problem_residuals(dec, est, delta):
    return {
        'min_eig_R': float(np.min(np.linalg.eigvalsh(dec.R.array))),
        'min_D': float(np.min(dec.D.diag())),
        'offdiag_residual': chi(dec.Sigma - dec.R).max_abs(),
        'kl_slack': 2.0 * kl_divergence(dec.Sigma, est) - delta,
    }
