"""Symmetric matrices with structural symmetry, plus the factorizations and the off-diagonal projection"""

__all__ = ['SymMat', 'SpectralDecomposition', 'chi', 'inner', 'logdet_pd', 'inv_pd', 'cholesky_lower',
           'eig_sym', 'numerical_rank', 'spectral_norm', 'is_pd']

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

import consts
from errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite


@functools.lru_cache(maxsize=64)
def _packed_layout(n):
    rows, cols = np.triu_indices(n)
    diagonal_mask = rows == cols
    rows.setflags(write=False)
    cols.setflags(write=False)
    diagonal_mask.setflags(write=False)
    return rows, cols, diagonal_mask


@dataclass(frozen=True, eq=False)
class SymMat:
    """Real symmetric n x n matrix stored as its packed upper triangle (row-major).

    Each off-diagonal entry is stored once, so the dense view is symmetric exactly.
    Instances are immutable; `array` is a read-only dense view built on first use.
    """
    n: int
    entries: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise DimensionMismatch(f'SymMat dimension must be positive, got {self.n}')
        entries = np.array(self.entries, dtype=float).reshape(-1)
        expected = self.n * (self.n + 1) // 2
        if entries.size != expected:
            raise DimensionMismatch(f'Packed storage for n={self.n} needs {expected} entries, got {entries.size}')
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def from_array(cls, a):
        """Builds a SymMat from the upper triangle of a square array (the lower triangle is ignored)"""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f'Expected a square matrix, got shape {a.shape}')
        rows, cols, _ = _packed_layout(a.shape[0])
        return cls(a.shape[0], a[rows, cols])

    @classmethod
    def symmetrized(cls, a):
        a = np.asarray(a, dtype=float)
        return cls.from_array(0.5 * (a + a.T))

    @classmethod
    def identity(cls, n):
        return cls.diagonal(np.ones(n))

    @classmethod
    def zeros(cls, n):
        return cls(n, np.zeros(n * (n + 1) // 2))

    @classmethod
    def diagonal(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        n = values.size
        _, _, diagonal_mask = _packed_layout(n)
        entries = np.zeros(n * (n + 1) // 2)
        entries[diagonal_mask] = values
        return cls(n, entries)

    @functools.cached_property
    def array(self):
        rows, cols, _ = _packed_layout(self.n)
        a = np.empty((self.n, self.n))
        a[rows, cols] = self.entries
        a[cols, rows] = self.entries
        a.setflags(write=False)
        return a

    def diag(self):
        _, _, diagonal_mask = _packed_layout(self.n)
        return self.entries[diagonal_mask].copy()

    def off_diagonal(self):
        _, _, diagonal_mask = _packed_layout(self.n)
        return self.entries[~diagonal_mask].copy()

    def trace(self):
        return float(np.sum(self.diag()))

    def is_diagonal(self, tol=0.0):
        off = self.off_diagonal()
        return off.size == 0 or float(np.max(np.abs(off))) <= tol

    def has_zero_diagonal(self, tol=0.0):
        return float(np.max(np.abs(self.diag()))) <= tol

    def max_abs(self):
        return float(np.max(np.abs(self.entries)))

    def _check_same_size(self, other):
        if self.n != other.n:
            raise DimensionMismatch(f'Dimension mismatch: {self.n} vs {other.n}')

    def __add__(self, other):
        if not isinstance(other, SymMat):
            return NotImplemented
        self._check_same_size(other)
        return SymMat(self.n, self.entries + other.entries)

    def __sub__(self, other):
        if not isinstance(other, SymMat):
            return NotImplemented
        self._check_same_size(other)
        return SymMat(self.n, self.entries - other.entries)

    def __neg__(self):
        return SymMat(self.n, -self.entries)

    def __mul__(self, scalar):
        if isinstance(scalar, SymMat):
            return NotImplemented
        return SymMat(self.n, float(scalar) * self.entries)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SymMat(self.n, self.entries / float(scalar))

    def __repr__(self):
        return f'SymMat(n={self.n}, array={self.array.tolist()!r})'


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in nonincreasing order and the matching orthonormal eigenvectors (columns)"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return SymMat.from_array((v * self.eigenvalues) @ v.T)


def chi(m):
    """Orthogonal projection onto the zero-diagonal matrices: keeps the off-diagonal part of `m`"""
    _, _, diagonal_mask = _packed_layout(m.n)
    entries = m.entries.copy()
    entries[diagonal_mask] = 0.0
    return SymMat(m.n, entries)


def inner(a, b):
    """<A, B> = tr(AB)"""
    if a.n != b.n:
        raise DimensionMismatch(f'Cannot take inner product of {a.n}x{a.n} and {b.n}x{b.n} matrices')
    return float(np.sum(a.array * b.array))


def _as_array(m):
    return m.array if isinstance(m, SymMat) else np.asarray(m, dtype=float)


def cholesky_lower(m):
    try:
        return np.linalg.cholesky(_as_array(m))
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f'Matrix is not positive definite: {e}') from e


def is_pd(m):
    try:
        np.linalg.cholesky(_as_array(m))
    except np.linalg.LinAlgError:
        return False
    return True


def logdet_pd(m):
    """log|M| from the Cholesky factor"""
    factor = cholesky_lower(m)
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def inv_pd(m):
    a = _as_array(m)
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f'Matrix is not positive definite: {e}') from e
    inverse = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]))
    return SymMat.from_array(inverse)


def eig_sym(m):
    try:
        w, v = np.linalg.eigh(_as_array(m))
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(f'Symmetric eigensolver did not converge: {e}') from e
    return SpectralDecomposition(eigenvalues=w[::-1].copy(), eigenvectors=v[:, ::-1].copy())


def spectral_norm(m):
    try:
        w = np.linalg.eigvalsh(_as_array(m))
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(f'Symmetric eigensolver did not converge: {e}') from e
    return float(np.max(np.abs(w)))


def numerical_rank(m, rel_tol=consts.DEFAULTS['symmat']['rank_rel_tol']):
    """Number of eigenvalues with |w_i| > rel_tol * max(|w_1|, floor)"""
    if rel_tol <= 0:
        raise ValueError(f'rel_tol must be positive, got {rel_tol}')
    try:
        w = np.abs(np.linalg.eigvalsh(_as_array(m)))
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(f'Symmetric eigensolver did not converge: {e}') from e
    threshold = rel_tol * max(float(np.max(w)), consts.DEFAULTS['symmat']['rank_floor'])
    rank = int(np.sum(w > threshold))
    logging.debug(f'numerical_rank: threshold={threshold:.3e}, rank={rank}')
    return rank
