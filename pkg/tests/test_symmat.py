import numpy as np
import pytest

from errors import DimensionMismatch, NotPositiveDefinite
from symmat import SymMat, chi, eig_sym, inner, inv_pd, is_pd, logdet_pd, numerical_rank, spectral_norm


def _random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return SymMat.symmetrized(a)


class TestStorage:
    def test_from_array_uses_upper_triangle(self):
        m = SymMat.from_array([[1.0, 2.0], [99.0, 3.0]])
        np.testing.assert_array_equal(m.array, [[1.0, 2.0], [2.0, 3.0]])

    def test_dense_view_is_exactly_symmetric(self, rng):
        m = _random_symmetric(rng, 7)
        np.testing.assert_array_equal(m.array, m.array.T)

    def test_entries_are_read_only(self):
        m = SymMat.identity(3)
        with pytest.raises(ValueError):
            m.entries[0] = 5.0
        with pytest.raises(ValueError):
            m.array[0, 0] = 5.0

    def test_wrong_packed_length(self):
        with pytest.raises(DimensionMismatch):
            SymMat(3, np.zeros(5))

    def test_non_square_input(self):
        with pytest.raises(DimensionMismatch):
            SymMat.from_array(np.zeros((2, 3)))

    def test_constructors(self):
        np.testing.assert_array_equal(SymMat.identity(3).array, np.eye(3))
        np.testing.assert_array_equal(SymMat.zeros(2).array, np.zeros((2, 2)))
        np.testing.assert_array_equal(SymMat.diagonal([1.0, 2.0]).array, np.diag([1.0, 2.0]))

    def test_diag_trace_and_predicates(self):
        m = SymMat.from_array([[1.0, 0.5], [0.5, 3.0]])
        np.testing.assert_array_equal(m.diag(), [1.0, 3.0])
        assert m.trace() == 4.0
        assert not m.is_diagonal()
        assert m.is_diagonal(tol=0.5)
        assert chi(m).has_zero_diagonal()
        assert m.max_abs() == 3.0


class TestArithmetic:
    def test_add_sub_scale(self, rng):
        a, b = _random_symmetric(rng, 4), _random_symmetric(rng, 4)
        np.testing.assert_allclose((a + b).array, a.array + b.array)
        np.testing.assert_allclose((a - b).array, a.array - b.array)
        np.testing.assert_allclose((2.5 * a).array, 2.5 * a.array)
        np.testing.assert_allclose((a * 2.5).array, 2.5 * a.array)
        np.testing.assert_allclose((a / 4.0).array, a.array / 4.0)
        np.testing.assert_allclose((-a).array, -a.array)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            SymMat.identity(2) + SymMat.identity(3)
        with pytest.raises(DimensionMismatch):
            inner(SymMat.identity(2), SymMat.identity(3))


class TestOffDiagonalProjection:
    def test_chi_algebra_on_random_matrices(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 51))
            a, b = _random_symmetric(rng, n), _random_symmetric(rng, n)
            chi_a = chi(a)
            # idempotent
            np.testing.assert_array_equal(chi(chi_a).entries, chi_a.entries)
            # self-adjoint
            assert inner(chi_a, b) == pytest.approx(inner(a, chi(b)), abs=1e-12 * (1 + abs(inner(a, b))) + 1e-12)
            # diagonal part and off-diagonal part are orthogonal and sum to a
            diagonal_part = a - chi_a
            assert diagonal_part.is_diagonal()
            assert inner(diagonal_part, chi_a) == 0.0
            np.testing.assert_array_equal((diagonal_part + chi_a).entries, a.entries)

    def test_inner_is_trace_of_product(self, rng):
        a, b = _random_symmetric(rng, 5), _random_symmetric(rng, 5)
        assert inner(a, b) == pytest.approx(np.trace(a.array @ b.array), rel=1e-12)


class TestFactorizations:
    def test_logdet_and_inverse(self, pd_factory):
        m = pd_factory(6)
        sign, expected = np.linalg.slogdet(m.array)
        assert sign == 1.0
        assert logdet_pd(m) == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(inv_pd(m).array @ m.array, np.eye(6), atol=1e-10)

    @pytest.mark.parametrize('condition', [1.0, 1e2, 1e4, 1e6])
    def test_inverse_is_an_involution(self, pd_factory, condition):
        for n in range(1, 9):
            m = pd_factory(n, condition=condition)
            twice = inv_pd(inv_pd(m))
            assert np.linalg.norm(twice.array - m.array) <= 1e-8 * np.linalg.norm(m.array)

    def test_not_positive_definite(self):
        m = SymMat.from_array([[1.0, 2.0], [2.0, 1.0]])
        assert not is_pd(m)
        with pytest.raises(NotPositiveDefinite):
            logdet_pd(m)
        with pytest.raises(NotPositiveDefinite):
            inv_pd(m)

    def test_eig_sym_order_and_reconstruction(self, rng):
        m = _random_symmetric(rng, 6)
        spectral = eig_sym(m)
        assert np.all(np.diff(spectral.eigenvalues) <= 0)
        np.testing.assert_allclose(spectral.reconstruct().array, m.array, atol=1e-12)
        assert spectral_norm(m) == pytest.approx(np.max(np.abs(spectral.eigenvalues)))

    def test_numerical_rank(self, rng):
        a = rng.standard_normal((6, 2))
        assert numerical_rank(SymMat.symmetrized(a @ a.T)) == 2
        assert numerical_rank(SymMat.zeros(3)) == 0
        with pytest.raises(ValueError):
            numerical_rank(SymMat.identity(2), rel_tol=0.0)


class TestWorkedExamples:
    def test_chi_of_two_by_two(self):
        np.testing.assert_array_equal(chi(SymMat.from_array([[2.0, 1.0], [1.0, 2.0]])).array, [[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(chi(SymMat.identity(4)).array, np.zeros((4, 4)))

    def test_inner(self):
        assert inner(SymMat.identity(3), SymMat.identity(3)) == 3.0
        a = SymMat.from_array([[1.0, 2.0], [2.0, 3.0]])
        b = SymMat.from_array([[0.0, 1.0], [1.0, 0.0]])
        assert inner(a, b) == 4.0

    def test_logdet(self):
        assert logdet_pd(SymMat.identity(3)) == 0.0
        assert logdet_pd(SymMat.diagonal([np.e, np.e ** 2])) == pytest.approx(3.0)
        assert logdet_pd(SymMat.from_array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(np.log(3.0))

    def test_inverse(self):
        np.testing.assert_allclose(inv_pd(SymMat.diagonal([2.0, 4.0])).array, np.diag([0.5, 0.25]))
        expected = np.array([[1.0, -0.6], [-0.6, 1.0]]) / 0.64
        np.testing.assert_allclose(inv_pd(SymMat.from_array([[1.0, 0.6], [0.6, 1.0]])).array, expected, rtol=1e-12)

    def test_eigenvalues(self):
        np.testing.assert_allclose(eig_sym(SymMat.diagonal([3.0, 1.0, 2.0])).eigenvalues, [3.0, 2.0, 1.0])
        spectral = eig_sym(SymMat.from_array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(spectral.eigenvalues, [1.0, -1.0], atol=1e-15)
        np.testing.assert_allclose(spectral.eigenvectors.T @ spectral.eigenvectors, np.eye(2), atol=1e-12)

    def test_rank(self):
        assert numerical_rank(SymMat.identity(4)) == 4
        assert numerical_rank(SymMat.from_array([[1.0, 1.0], [1.0, 1.0]])) == 1
