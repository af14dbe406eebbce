"""Shared linear-algebra helpers: jittered Cholesky solves and the
arrowhead sparse-precision format (dense diagonal plus one dense row and
column at coordinate 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ParameterDomainError

__all__ = [
    "cholesky_with_jitter",
    "solve_spd",
    "solve_regression",
    "is_spd",
    "ArrowheadMatrix",
]

# Jitter starts at 1e-10 * trace/dim and is retried over three magnitudes.
_JITTER_BASE = 1e-10
_JITTER_TRIES = 3


def cholesky_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a nearly-PSD symmetric matrix.

    On failure, adds ``1e-10 * trace/dim`` to the diagonal and retries,
    escalating the jitter by a factor of 10 up to three magnitudes.
    Raises ``np.linalg.LinAlgError`` if all attempts fail.
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    scale = max(np.trace(a) / n, np.finfo(float).tiny)
    jitter = _JITTER_BASE * scale
    for _ in range(_JITTER_TRIES):
        try:
            return np.linalg.cholesky(a + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("matrix not positive definite after jitter")


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for symmetric positive definite a, with jitter fallback."""
    chol = cholesky_with_jitter(a)
    return scipy.linalg.cho_solve((chol, True), b)


def solve_regression(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve the regression system C eta = g.

    Uses a symmetric factorization (with the jitter policy) when C is
    symmetric; gradient-form C matrices are asymmetric draw to draw, so
    those fall back to a plain LU solve.
    """
    c = np.asarray(c, dtype=float)
    if c.shape == (1, 1):
        if c[0, 0] == 0.0:
            raise np.linalg.LinAlgError("singular 1x1 system")
        return np.asarray(g, dtype=float) / c[0, 0]
    sym_gap = np.max(np.abs(c - c.T))
    if sym_gap <= 1e-12 * max(1.0, np.max(np.abs(c))):
        return solve_spd(c, g)
    return np.linalg.solve(c, g)


def is_spd(a: np.ndarray) -> bool:
    """Strict positive-definiteness check by factorization attempt (no jitter)."""
    if not np.all(np.isfinite(a)):
        return False
    try:
        np.linalg.cholesky(0.5 * (a + a.T))
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class ArrowheadMatrix:
    """Symmetric matrix with nonzeros on the diagonal plus row/column 0.

    Layout::

        [ corner   wing'   ]
        [ wing   diag(spine) ]

    ``corner`` is the (0, 0) entry, ``wing`` the dense column below it and
    ``spine`` the remaining diagonal.  Closed under linear combination,
    solvable and factorizable in O(n).
    """

    corner: float
    wing: np.ndarray
    spine: np.ndarray

    @property
    def n(self) -> int:
        return self.spine.shape[0] + 1

    @classmethod
    def zeros(cls, n: int) -> "ArrowheadMatrix":
        return cls(0.0, np.zeros(n - 1), np.zeros(n - 1))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "ArrowheadMatrix":
        n = a.shape[0]
        off = a[1:, 1:] - np.diag(np.diag(a[1:, 1:]))
        if np.any(off != 0.0):
            raise ValueError("dense matrix is not arrowhead")
        return cls(float(a[0, 0]), a[1:, 0].copy(), np.diag(a)[1:].copy())

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[0, 0] = self.corner
        a[1:, 0] = self.wing
        a[0, 1:] = self.wing
        a[1:, 1:] = np.diag(self.spine)
        return a

    def __add__(self, other: "ArrowheadMatrix") -> "ArrowheadMatrix":
        return ArrowheadMatrix(self.corner + other.corner, self.wing + other.wing,
                               self.spine + other.spine)

    def __sub__(self, other: "ArrowheadMatrix") -> "ArrowheadMatrix":
        return ArrowheadMatrix(self.corner - other.corner, self.wing - other.wing,
                               self.spine - other.spine)

    def __mul__(self, s: float) -> "ArrowheadMatrix":
        return ArrowheadMatrix(s * self.corner, s * self.wing, s * self.spine)

    __rmul__ = __mul__

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n)
        out[0] = self.corner * x[0] + self.wing @ x[1:]
        out[1:] = self.wing * x[0] + self.spine * x[1:]
        return out

    def _schur(self) -> float:
        # Schur complement of the spine block onto coordinate 0.
        return self.corner - np.sum(self.wing**2 / self.spine)

    def is_pd(self) -> bool:
        if not (np.all(np.isfinite(self.spine)) and np.all(np.isfinite(self.wing))
                and np.isfinite(self.corner)):
            return False
        if np.any(self.spine <= 0.0):
            return False
        return self._schur() > 0.0

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b by eliminating the spine block, O(n)."""
        if np.any(self.spine <= 0.0):
            raise ParameterDomainError("arrowhead spine not positive")
        s = self._schur()
        if s <= 0.0:
            raise ParameterDomainError("arrowhead matrix not positive definite")
        x0 = (b[0] - np.sum(self.wing * b[1:] / self.spine)) / s
        x = np.empty(self.n)
        x[0] = x0
        x[1:] = (b[1:] - x0 * self.wing) / self.spine
        return x

    def logdet(self) -> float:
        s = self._schur()
        if s <= 0.0 or np.any(self.spine <= 0.0):
            raise ParameterDomainError("arrowhead matrix not positive definite")
        return float(np.log(s) + np.sum(np.log(self.spine)))

    def inverse_dense(self) -> np.ndarray:
        """Dense inverse (covariance from precision); O(n^2) output."""
        s = self._schur()
        u = self.wing / self.spine
        cov = np.empty((self.n, self.n))
        cov[0, 0] = 1.0 / s
        cov[1:, 0] = -u / s
        cov[0, 1:] = -u / s
        cov[1:, 1:] = np.diag(1.0 / self.spine) + np.outer(u, u) / s
        return cov

    def sample_gaussian(self, mean: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Map standard-normal noise z to a draw of N(mean, A^{-1}).

        Uses the Cholesky factor of the permuted matrix that orders the
        dense coordinate last, so the factor stays arrowhead and the
        triangular solve is O(n).
        """
        if np.any(self.spine <= 0.0):
            raise ParameterDomainError("arrowhead spine not positive")
        s = self._schur()
        if s <= 0.0:
            raise ParameterDomainError("arrowhead matrix not positive definite")
        # Permuted order (spine..., corner): L = [[diag(sqrt_d), 0], [w', sqrt(s)]]
        sqrt_d = np.sqrt(self.spine)
        w = self.wing / sqrt_d
        # Solve L' u = z  (upper triangular, arrowhead): last coordinate first.
        u_last = z[-1] / np.sqrt(s)
        u_rest = (z[:-1] - w * u_last) / sqrt_d
        x = np.empty(self.n)
        x[0] = mean[0] + u_last
        x[1:] = mean[1:] + u_rest
        return x
