"""Solves the simplified dual problem min F(lambda, X) over C_F and extracts the multipliers Theta and Gamma"""

__all__ = ['DualOptions', 'DualPoint', 'DualSolution', 'make_point', 'dual_objective', 'dual_gradient',
           'dual_objective_multipliers', 'in_dual_domain', 'project_feasible', 'solve_dual', 'perturbed_start']

import datetime
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import humanize
import numpy as np

import consts
from errors import DeltaTooLarge, InfeasiblePoint, InvalidTolerance, MaxIterations, NumericalBreakdown
from estimation import delta_max
from symmat import SymMat, chi, inner, inv_pd

_DEFAULTS = consts.DEFAULTS['dual']

# slack allowed on X <= I and diag(X) <= 0 when checking membership of C_F
EIGEN_SLACK = 1e-10
DIAGONAL_SLACK = 1e-12


@dataclass
class DualOptions:
    tol: float = _DEFAULTS['tol']
    max_iter: int = _DEFAULTS['max_iter']
    armijo_c: float = _DEFAULTS['armijo_c']
    armijo_factor: float = _DEFAULTS['armijo_factor']
    max_backtracks: int = _DEFAULTS['max_backtracks']
    projection_rounds: int = _DEFAULTS['projection_rounds']
    objective_noise: float = _DEFAULTS['objective_noise']
    lambda_min: float = _DEFAULTS['lambda_min']
    lambda_max: float = _DEFAULTS['lambda_max']
    x_norm_max: float = _DEFAULTS['x_norm_max']
    step_min: float = _DEFAULTS['step_min']
    step_max: float = _DEFAULTS['step_max']
    log_every: int = _DEFAULTS['log_every']
    record_trace: bool = False
    strict: bool = False


@dataclass(frozen=True)
class DualPoint:
    """A point (lambda, X) of C_F with W = Sigma_hat^-1 + X / lambda cached"""
    lam: float
    X: SymMat
    W: SymMat
    logdet_W: float


@dataclass(frozen=True)
class DualSolution:
    point: DualPoint
    theta: SymMat
    gamma: SymMat
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    delta: float
    trace: List[Tuple[int, float, float, float, float]] = field(default_factory=list, repr=False)

    @property
    def dual_value(self):
        """J(lambda*, Gamma*, Theta*) = -F(lambda*, X*)"""
        return -self.objective


def _logdet_or_none(a):
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def _w_matrix(lam, x, est):
    return est.sigma_hat_inv.array + x / lam


def make_point(lam, X, est, check=True):
    """Builds a DualPoint, raising InfeasiblePoint when (lam, X) is outside C_F"""
    if not isinstance(X, SymMat):
        X = SymMat.from_array(X)
    if check:
        if not lam > 0:
            raise InfeasiblePoint(f'lambda must be positive, got {lam}')
        top = float(np.max(np.linalg.eigvalsh(X.array)))
        if top > 1.0 + EIGEN_SLACK:
            raise InfeasiblePoint(f'X <= I violated: largest eigenvalue {top:.12g}')
        worst_diagonal = float(np.max(X.diag()))
        if worst_diagonal > DIAGONAL_SLACK:
            raise InfeasiblePoint(f'chi(X) - X >= 0 violated: diagonal entry {worst_diagonal:.3e} > 0')
    w = _w_matrix(lam, X.array, est)
    logdet_w = _logdet_or_none(w)
    if logdet_w is None:
        raise InfeasiblePoint('Sigma_hat^-1 + X / lambda is not positive definite')
    return DualPoint(lam=float(lam), X=X, W=SymMat.from_array(w), logdet_W=logdet_w)


def _objective_value(lam, logdet_w, est, delta):
    return -lam * (logdet_w + est.logdet_sigma_hat - delta)


def dual_objective(p, est, delta):
    """F(lambda, X) = -lambda [log|Sigma_hat^-1 + X/lambda| + log|Sigma_hat| - delta]"""
    return _objective_value(p.lam, p.logdet_W, est, delta)


def dual_gradient(p, est, delta):
    """(dF/dlambda, dF/dX) with dF/dX = -W^-1 and dF/dlambda = -[log|W| + log|S| - delta] + tr(W^-1 X)/lambda"""
    w_inv = inv_pd(p.W)
    d_lambda = -(p.logdet_W + est.logdet_sigma_hat - delta) + inner(w_inv, p.X) / p.lam
    return d_lambda, -w_inv


def dual_objective_multipliers(lam, gamma, theta, est, delta):
    """J(lambda, Gamma, Theta) = lambda (log|Sigma_hat^-1 + (chi(Theta) - Gamma)/lambda| + log|Sigma_hat| - delta)"""
    if not lam > 0:
        raise InfeasiblePoint(f'lambda must be positive, got {lam}')
    w = _w_matrix(lam, (chi(theta) - gamma).array, est)
    logdet_w = _logdet_or_none(w)
    if logdet_w is None:
        raise InfeasiblePoint('Sigma_hat^-1 + (chi(Theta) - Gamma)/lambda is not positive definite')
    return lam * (logdet_w + est.logdet_sigma_hat - delta)


def in_dual_domain(lam, gamma, theta, est, tol=EIGEN_SLACK):
    """Membership of (lambda, Gamma, Theta) in the domain of the dual problem"""
    if not lam > 0:
        return False
    lam_matrix = np.eye(est.n) + gamma.array - chi(theta).array
    if float(np.min(np.linalg.eigvalsh(lam_matrix))) < -tol:
        return False
    if float(np.min(np.linalg.eigvalsh(gamma.array))) < -tol:
        return False
    return _logdet_or_none(_w_matrix(lam, (chi(theta) - gamma).array, est)) is not None


def _clip_top_eigenvalues(z):
    """min(Z, I) in the spectral sense, together with the eigenpairs of Z"""
    w, v = np.linalg.eigh(z)
    above = w > 1.0
    if not np.any(above):
        return z.copy(), w, v
    v_top = v[:, above]
    x = z - (v_top * (w[above] - 1.0)) @ v_top.T
    return 0.5 * (x + x.T), w, v


def _clip_divided_differences(w):
    """First divided differences of t -> min(t, 1) over the eigenvalues w"""
    clipped = np.minimum(w, 1.0)
    slope = (w < 1.0).astype(float)
    gap = w[:, None] - w[None, :]
    close = np.abs(gap) <= 1e-12 * max(1.0, float(np.max(np.abs(w))))
    safe_gap = np.where(close, 1.0, gap)
    return np.where(close, 0.5 * (slope[:, None] + slope[None, :]),
                    (clipped[:, None] - clipped[None, :]) / safe_gap)


def _diagonal_jacobian_rows(w, v, rows):
    """Rows of the positive semidefinite K with K[k, m] = d diag(min(Z, I))_k / d Z_mm"""
    omega = _clip_divided_differences(w)
    jacobian = np.empty((rows.size, w.size))
    for position, k in enumerate(rows):
        b = v * v[k]
        jacobian[position] = np.sum((b @ omega) * b, axis=1)
    return jacobian


class _FeasibleSetProjector:
    """Frobenius projection onto {X <= I, diag(X) <= 0}.

    The projection of Y is min(Y - Diag(mu), I) for the diagonal multiplier mu >= 0 that satisfies
    diag(X) <= 0 and mu_i X_ii = 0. mu is found by semismooth Newton on the natural residual
    mu - max(mu + diag(X), 0), with a projected ascent step on the dual whenever Newton does not
    shrink the residual. mu is kept between calls, so consecutive projections start almost converged.
    """

    def __init__(self, n, rounds, tol=1e-13):
        self.mu = np.zeros(n)
        self.rounds = rounds
        self.tol = tol
        self.last_rounds = 0
        self.last_residual = 0.0

    def _solve(self, y, mu):
        x, w, v = _clip_top_eigenvalues(y - np.diag(mu))
        residual = mu - np.maximum(mu + np.diag(x), 0.0)
        return mu, x, w, v, residual

    def _newton_candidate(self, mu, x, w, v):
        active = np.flatnonzero(mu + np.diag(x) > 0)
        candidate = np.zeros_like(mu)
        if active.size == 0:
            return candidate
        inactive = np.setdiff1d(np.arange(mu.size), active)
        jacobian = _diagonal_jacobian_rows(w, v, active)
        rhs = np.diag(x)[active] + jacobian[:, inactive] @ mu[inactive]
        step = np.linalg.lstsq(jacobian[:, active], rhs, rcond=None)[0]
        candidate[active] = np.maximum(mu[active] + step, 0.0)
        return candidate

    def __call__(self, y):
        threshold = self.tol * max(1.0, float(np.max(np.abs(y))))
        mu, x, w, v, residual = self._solve(y, self.mu)
        size = float(np.linalg.norm(residual))
        self.last_rounds = 0
        for k in range(1, self.rounds + 1):
            if float(np.max(np.abs(residual))) <= threshold:
                break
            self.last_rounds = k
            trial = self._solve(y, self._newton_candidate(mu, x, w, v))
            trial_size = float(np.linalg.norm(trial[4]))
            if not trial_size < (1.0 - 1e-4) * size:
                trial = self._solve(y, np.maximum(mu + np.diag(x), 0.0))
                trial_size = float(np.linalg.norm(trial[4]))
            mu, x, w, v, residual = trial
            size = trial_size
        self.mu = mu
        self.last_residual = float(np.max(np.abs(residual)))
        # lowering diagonal entries subtracts a psd diagonal matrix, so X <= I survives
        x = x.copy()
        x[np.diag_indices_from(x)] = np.minimum(np.diag(x), 0.0)
        return x


def project_feasible(X, rounds=200):
    """Projection of a symmetric matrix onto {X <= I, diag(X) <= 0}"""
    projector = _FeasibleSetProjector(X.n, rounds)
    return SymMat.from_array(projector(X.array))


def _check_safeguards(lam, x, opts, iteration):
    if lam > opts.lambda_max:
        raise NumericalBreakdown(f'lambda={lam:.3e} exceeded {opts.lambda_max:.1e} at iteration {iteration}; '
                                 'delta is probably too close to 0 for this problem')
    frobenius = float(np.linalg.norm(x))
    if frobenius > opts.x_norm_max and float(np.linalg.norm(x, 2)) > opts.x_norm_max:
        raise NumericalBreakdown(f'||X||_2 exceeded {opts.x_norm_max:.1e} at iteration {iteration}')


def _barzilai_borwein(s, y, previous, opts):
    curvature = float(np.sum(s * y))
    if curvature <= 0:
        return min(2.0 * previous, opts.step_max)
    return float(np.clip(np.sum(s * s) / curvature, opts.step_min, opts.step_max))


def solve_dual(est, delta, opts=None, initial=None, callback=None):
    """Projected gradient with Barzilai-Borwein steps and Armijo backtracking on min F over C_F.

    `initial` optionally overrides the default start (lambda=1, X=0) with a feasible (lambda0, X0).
    `callback(iteration, lam, X)` is called with every accepted iterate.
    """
    if opts is None:
        opts = DualOptions()
    if opts.max_iter < 1:
        raise ValueError(f'max_iter must be at least 1, got {opts.max_iter}')
    if delta <= 0:
        raise InvalidTolerance(f'delta must be positive, got {delta}')
    ceiling = delta_max(est).delta_max
    if delta >= ceiling:
        raise DeltaTooLarge(f'delta={delta:.6g} is not below delta_max={ceiling:.6g}')

    started = time.perf_counter()
    n = est.n
    s_inv = est.sigma_hat_inv.array

    if initial is None:
        lam, x = 1.0, np.zeros((n, n))
    else:
        lam0, x0 = initial
        x0 = x0.array if isinstance(x0, SymMat) else np.asarray(x0, dtype=float)
        start = make_point(lam0, SymMat.from_array(x0), est)
        lam, x = start.lam, start.X.array.copy()

    def evaluate(lam_, x_):
        logdet_w = _logdet_or_none(s_inv + x_ / lam_)
        if logdet_w is None:
            return None, None
        return _objective_value(lam_, logdet_w, est, delta), logdet_w

    def gradient(lam_, x_, logdet_w):
        w_inv = inv_pd(s_inv + x_ / lam_).array
        g_lam = -(logdet_w + est.logdet_sigma_hat - delta) + float(np.sum(w_inv * x_)) / lam_
        return g_lam, -w_inv

    step_projector = _FeasibleSetProjector(n, opts.projection_rounds)
    measure_projector = _FeasibleSetProjector(n, opts.projection_rounds)

    f_value, logdet_w = evaluate(lam, x)
    if f_value is None:
        raise InfeasiblePoint('Starting point is outside C_F')
    g_lam, g_x = gradient(lam, x, logdet_w)
    alpha_lam = 1.0 / max(1.0, abs(g_lam))
    alpha_x = 1.0 / max(1.0, float(np.linalg.norm(g_x)))

    trace = []
    measure = np.inf
    converged = False
    iteration = 0
    logging.info(f'Running dual solver: n={n}, delta={delta:.6g}, delta_max={ceiling:.6g}, tol={opts.tol:g}')

    for iteration in range(1, opts.max_iter + 1):
        # optimality measure: length of the unit-step projected gradient step
        lam_unit = max(lam - g_lam, opts.lambda_min)
        x_unit = measure_projector(x - g_x)
        measure = float(np.sqrt((lam_unit - lam) ** 2 + np.sum((x_unit - x) ** 2)))
        if opts.record_trace:
            trace.append((iteration, f_value, lam, measure, alpha_x))
        if iteration % opts.log_every == 0:
            logging.debug(f'Dual iteration {iteration}: F={f_value:.12g}, lambda={lam:.6g}, measure={measure:.3e}, '
                          f'steps=({alpha_lam:.3e}, {alpha_x:.3e}), projection rounds={step_projector.last_rounds} '
                          f'(residual {step_projector.last_residual:.1e})')
        if measure <= opts.tol * (1.0 + abs(f_value)):
            converged = True
            break

        d_lam = max(lam - alpha_lam * g_lam, opts.lambda_min) - lam
        d_x = step_projector(x - alpha_x * g_x) - x
        if d_lam == 0.0 and not np.any(d_x):
            logging.warning(f'Dual solver stalled at iteration {iteration}: zero projected step '
                            f'(measure={measure:.3e})')
            break
        # for an exact projection <g, d> <= -|d|^2 / alpha; the bound stays negative when rounding spoils the sign
        model_decrease = -(d_lam ** 2 / alpha_lam + float(np.sum(d_x * d_x)) / alpha_x)
        slope = min(g_lam * d_lam + float(np.sum(g_x * d_x)), model_decrease)
        # differences of F below this are rounding noise of the log-determinant
        noise = opts.objective_noise * (1.0 + abs(f_value))

        t = 1.0
        accepted = False
        any_pd = False
        for _ in range(opts.max_backtracks):
            lam_trial = lam + t * d_lam
            x_trial = x + t * d_x
            f_trial, logdet_trial = evaluate(lam_trial, x_trial)
            if f_trial is not None:
                any_pd = True
                if f_trial <= f_value + opts.armijo_c * t * slope + noise:
                    accepted = True
                    break
            t *= opts.armijo_factor

        if not accepted:
            if not any_pd:
                raise NumericalBreakdown(f'Sigma_hat^-1 + X/lambda lost positive definiteness along every trial step '
                                         f'at iteration {iteration}')
            logging.warning(f'Dual solver line search failed at iteration {iteration} (measure={measure:.3e})')
            break

        g_lam_next, g_x_next = gradient(lam_trial, x_trial, logdet_trial)
        alpha_lam = _barzilai_borwein(np.array([lam_trial - lam]), np.array([g_lam_next - g_lam]), alpha_lam, opts)
        alpha_x = _barzilai_borwein(x_trial - x, g_x_next - g_x, alpha_x, opts)

        lam, x, f_value, logdet_w = lam_trial, x_trial, f_trial, logdet_trial
        g_lam, g_x = g_lam_next, g_x_next
        _check_safeguards(lam, x, opts, iteration)
        if callback is not None:
            callback(iteration, lam, x)

    point = make_point(lam, SymMat.from_array(x), est)
    theta = chi(point.X)
    solution = DualSolution(point=point,
                            theta=theta,
                            gamma=theta - point.X,
                            objective=f_value,
                            grad_norm=measure,
                            iterations=iteration,
                            converged=converged,
                            delta=delta,
                            trace=trace)

    elapsed = humanize.precisedelta(datetime.timedelta(seconds=time.perf_counter() - started),
                                    minimum_unit='milliseconds')
    if converged:
        logging.info(f'Dual solver converged in {iteration} iterations ({elapsed}): '
                     f'lambda*={lam:.8g}, F*={f_value:.10g}')
    else:
        message = (f'Dual solver stopped after {iteration} iterations ({elapsed}) without converging: '
                   f'measure={measure:.3e}, lambda={lam:.6g}')
        if opts.strict:
            raise MaxIterations(message, result=solution)
        logging.warning(message)
    return solution


def perturbed_start(est, rng, scale=0.05):
    """A random feasible starting point near (1, 0), used to check that the solution does not depend on the start"""
    n = est.n
    noise = rng.standard_normal((n, n)) * scale
    x0 = project_feasible(SymMat.symmetrized(noise))
    lam0 = float(np.exp(rng.uniform(-0.5, 0.5)))
    while _logdet_or_none(_w_matrix(lam0, x0.array, est)) is None:
        x0 = 0.5 * x0
    return lam0, x0
