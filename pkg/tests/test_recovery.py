import dataclasses

import numpy as np
import pytest

from dual_solver import DualOptions, DualSolution, make_point, solve_dual
from errors import DimensionMismatch, EmptyKernel, InconsistentSystem, IndefiniteQ
from estimation import CovarianceEstimate, kl_divergence, make_tolerance
from mtfa_solver import MtfaOptions, solve_mtfa
from recovery import (RecoveryOptions, certify, kernel_basis, lagrangian, lambda_matrix, primal_problem_residuals,
                      recover, recover_sigma, solve_for_Q)
from symmat import SymMat, chi, numerical_rank


def _solve(est, fraction=0.5, tol=None):
    tolerance = make_tolerance(est, fraction)
    opts = DualOptions() if tol is None else DualOptions(tol=tol)
    solution = solve_dual(est, tolerance.delta, opts)
    return tolerance, solution, recover(solution, est, tolerance.delta)


def _orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


class TestKernel:
    def test_kernel_of_diagonal(self):
        basis = kernel_basis(SymMat.diagonal([2.0, 0.0, 1.0]))
        assert basis.r == 1
        np.testing.assert_allclose(np.abs(basis.u_tilde[:, 0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_empty_kernel(self):
        assert kernel_basis(SymMat.identity(3)).r == 0
        with pytest.raises(EmptyKernel):
            kernel_basis(SymMat.identity(3), allow_empty=False)

    def test_invalid_tolerance(self):
        with pytest.raises(ValueError):
            kernel_basis(SymMat.identity(2), rel_tol=0.0)


class TestSolveForQ:
    def test_recovers_low_rank_part(self, rng):
        u = _orthonormal(rng, 5, 2)
        q = np.array([[2.0, 0.5], [0.5, 1.0]])
        d = np.diag([0.3, 0.4, 0.5, 0.6, 0.7])
        sigma_star = SymMat.symmetrized(u @ q @ u.T + d)
        solution = solve_for_Q(u, sigma_star, SymMat.zeros(5))
        np.testing.assert_allclose(solution.Q, q, atol=1e-10)
        np.testing.assert_allclose(solution.R.array, u @ q @ u.T, atol=1e-10)
        assert not solution.non_unique
        assert solution.n_equations == 10

    def test_active_diagonal_equations(self, rng):
        u = _orthonormal(rng, 4, 1)
        sigma_star = SymMat.symmetrized(3.0 * u @ u.T + np.diag([0.0, 0.2, 0.2, 0.2]))
        gamma = SymMat.diagonal([1.0, 0.0, 0.0, 0.0])
        solution = solve_for_Q(u, sigma_star, gamma)
        assert solution.n_equations == 7
        assert solution.Q[0, 0] == pytest.approx(3.0, rel=1e-10)

    def test_inconsistent_system(self, rng, pd_factory):
        u = _orthonormal(rng, 5, 1)
        with pytest.raises(InconsistentSystem):
            solve_for_Q(u, pd_factory(5), SymMat.zeros(5))

    def test_indefinite_q(self, rng):
        u = _orthonormal(rng, 5, 2)
        q = np.diag([1.0, -1.0])
        sigma_star = SymMat.symmetrized(u @ q @ u.T + 2.0 * np.eye(5))
        with pytest.raises(IndefiniteQ):
            solve_for_Q(u, sigma_star, SymMat.zeros(5))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            solve_for_Q(_orthonormal(rng, 4, 1), SymMat.identity(3), SymMat.zeros(3))


class TestRecovery:
    def test_two_by_two_structure(self, small_estimate):
        tolerance, solution, dec = _solve(small_estimate)
        assert dec.rank_R == 1
        off = dec.Sigma.array[0, 1]
        np.testing.assert_allclose(dec.R.array, np.full((2, 2), off), atol=1e-6)
        np.testing.assert_allclose(dec.D.diag(), dec.Sigma.diag() - off, atol=1e-6)
        assert dec.kl_to_sigma_hat * 2.0 == pytest.approx(tolerance.delta, abs=1e-6)
        assert dec.certificate.passed
        np.testing.assert_allclose(dec.loadings @ dec.loadings.T, dec.R.array, atol=1e-8)

    def test_lambda_matrix_is_identity_minus_x(self, small_estimate):
        _, solution, _ = _solve(small_estimate)
        expected = np.eye(2) - solution.point.X.array
        np.testing.assert_allclose(lambda_matrix(solution).array, expected, atol=1e-14)
        np.testing.assert_allclose(recover_sigma(solution, small_estimate).array @ solution.point.W.array,
                                   np.eye(2), atol=1e-10)

    def test_lagrangian_equals_trace(self, estimate_factory):
        est = estimate_factory(5, r=2)
        tolerance, solution, dec = _solve(est)
        value = lagrangian(dec.R, dec.Sigma, solution.point.lam, lambda_matrix(solution), solution.gamma,
                           solution.theta, est, tolerance.delta)
        assert value == pytest.approx(dec.R.trace(), abs=1e-5 * (1.0 + dec.R.trace()))

    def test_primal_feasibility(self, estimate_factory):
        est = estimate_factory(6, r=2)
        tolerance, _, dec = _solve(est)
        residuals = primal_problem_residuals(dec, est, tolerance.delta)
        scale = 1.0 + dec.Sigma.max_abs()
        assert residuals['min_eig_R'] >= -1e-6 * scale
        assert residuals['min_D'] >= -1e-6 * scale
        assert residuals['offdiag_residual'] <= 1e-6 * scale
        assert residuals['kl_slack'] == pytest.approx(0.0, abs=1e-6)

    def test_sigma_splits_into_common_and_diagonal_parts(self, rng, estimate_factory):
        for _ in range(5):
            n = int(rng.integers(3, 9))
            est = estimate_factory(n, r=int(rng.integers(1, n - 1)))
            _, solution, dec = _solve(est)
            scale = 1.0 + dec.Sigma.max_abs()
            np.testing.assert_allclose((dec.R + dec.D).array, dec.Sigma.array, rtol=0, atol=1e-6 * scale)
            # an active diagonal multiplier forces a zero idiosyncratic variance
            assert np.max(np.minimum(solution.gamma.diag(), dec.D.diag())) <= 1e-6 * scale

    def test_trivial_decomposition(self, small_estimate):
        point = make_point(1.0, SymMat.zeros(2), small_estimate)
        solution = DualSolution(point=point, theta=SymMat.zeros(2), gamma=SymMat.zeros(2), objective=0.1,
                                grad_norm=0.0, iterations=0, converged=True, delta=0.1)
        dec = recover(solution, small_estimate, 0.1)
        assert dec.rank_R == 0
        assert dec.kernel_dim == 0
        assert dec.R.trace() == 0.0
        np.testing.assert_allclose(dec.D.array, small_estimate.sigma_hat.diag() * np.eye(2))
        with pytest.raises(EmptyKernel):
            recover(solution, small_estimate, 0.1, RecoveryOptions(allow_trivial=False))


@pytest.mark.slow
class TestCertification:
    def test_zero_gap_and_kkt_on_random_instances(self, rng, estimate_factory):
        for _ in range(20):
            n = int(rng.integers(2, 21))
            r = int(rng.integers(1, max(2, n // 3)))
            est = estimate_factory(n, r=r)
            tolerance, _, dec = _solve(est)
            report = dec.certificate
            assert report.gap <= 1e-4
            assert max(report.c1, report.c2, report.c3) <= 1e-5
            assert report.raw['boundary'] <= 1e-6

    def test_small_tolerance_approaches_mtfa(self, estimate_factory):
        for _ in range(5):
            est = estimate_factory(8, r=2)
            baseline = solve_mtfa(est.sigma_hat, MtfaOptions(tol=1e-10)).trace_R
            traces = []
            for k in range(1, 7):
                _, _, dec = _solve(est, fraction=2.0 ** -k)
                traces.append(dec.R.trace())
            slack = 1e-4 * (1.0 + baseline)
            assert all(later >= earlier - slack for earlier, later in zip(traces, traces[1:]))
            assert traces[-1] <= baseline + slack
            assert baseline - traces[-1] < baseline - traces[0]


def test_recovered_sigma_lies_on_ball_boundary(estimate_factory):
    est = estimate_factory(4, r=1)
    tolerance, _, dec = _solve(est)
    assert 2.0 * kl_divergence(dec.Sigma, est) == pytest.approx(tolerance.delta, abs=1e-6)
    assert chi(dec.Sigma - dec.R).max_abs() <= 1e-6 * (1.0 + dec.Sigma.max_abs())
    assert numerical_rank(dec.R, 1e-6) == dec.rank_R


class TestWorkedExamples:
    def _solution(self, est, lam, x):
        point = make_point(lam, x, est, check=False)
        theta = chi(point.X)
        return DualSolution(point=point, theta=theta, gamma=theta - point.X, objective=0.0, grad_norm=0.0,
                            iterations=0, converged=True, delta=0.1)

    def test_scalar_sigma(self):
        est = CovarianceEstimate.from_sigma_hat(SymMat.identity(1))
        solution = self._solution(est, 1.0, SymMat.diagonal([-0.5]))
        assert recover_sigma(solution, est).array[0, 0] == pytest.approx(2.0)

    def test_lambda_matrix(self, small_estimate):
        assert lambda_matrix(self._solution(small_estimate, 1.0, SymMat.zeros(2))).array.tolist() == np.eye(
            2).tolist()
        boundary = self._solution(small_estimate, 10.0, SymMat.identity(2) * 1.0)
        np.testing.assert_allclose(lambda_matrix(boundary).array, np.zeros((2, 2)), atol=1e-15)

    def test_kernel_multiplicity(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        x = SymMat.symmetrized((q * np.array([1.0, 1.0, 1.0, 1.0, -0.5, -2.0])) @ q.T)
        basis = kernel_basis(SymMat.identity(6) - x)
        assert basis.r == 4

    def test_two_dimensional_kernel(self):
        basis = kernel_basis(SymMat.diagonal([0.0, 0.0, 1.0, 2.0]))
        assert basis.r == 2
        np.testing.assert_allclose(basis.u_tilde[2:, :], np.zeros((2, 2)), atol=1e-15)

    def test_full_kernel_is_not_unique(self):
        sigma_star = SymMat.from_array([[2.0, 0.5, 0.2], [0.5, 2.0, 0.1], [0.2, 0.1, 2.0]])
        solution = solve_for_Q(np.eye(3), sigma_star, SymMat.zeros(3))
        assert solution.non_unique
        np.testing.assert_allclose(solution.Q, chi(sigma_star).array, atol=1e-12)

    def test_rank_one_kernel_ratio(self):
        u = np.array([[1.0], [2.0], [2.0]]) / 3.0
        sigma_star = SymMat.symmetrized(4.5 * u @ u.T + np.eye(3))
        solution = solve_for_Q(u, sigma_star, SymMat.zeros(3))
        assert solution.Q[0, 0] == pytest.approx(4.5, rel=1e-12)

    def test_corrupted_decomposition_fails_certification(self, small_estimate):
        tolerance, solution, dec = _solve(small_estimate)
        corrupted = dataclasses.replace(dec, R=dec.R + SymMat.identity(2) * 0.1)
        report = certify(corrupted, solution, small_estimate, tolerance.delta)
        assert not report.passed
        assert report.raw['gap'] > 0.1
