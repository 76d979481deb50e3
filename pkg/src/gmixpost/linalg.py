"""Covariance factorizations and shared dense linear algebra helpers.

Covariances enter every formula through four actions: products, solves,
log-determinants and square roots.  The two concrete factors below cover the
cases the library needs: a diagonal matrix (O(d) everywhere) and a dense SPD
matrix held through its Cholesky factor.  Sampling code additionally needs a
factor ``L`` of the *precision*, ``Sigma^{-1} = L L^T``; both classes expose
products with ``L^T`` and ``L``.
"""

import numpy as np
from scipy import linalg as sla

from .errors import DomainError, NumericalError, ShapeError

__all__ = [
    "CovarianceFactor",
    "DiagonalFactor",
    "DenseFactor",
    "as_covariance_factor",
    "jittered_cholesky",
]

# Jitter policy for near-singular SPD factorizations: start at 1e-12*trace/d,
# escalate tenfold up to 1e-6*trace/d, then give up.
_JITTER_START = 1e-12
_JITTER_LIMIT = 1e-6


def jittered_cholesky(mat, what="matrix"):
    """Lower Cholesky factor of ``mat``, retrying with escalating jitter.

    Returns ``(L, jitter_used)``.  Raises NumericalError when the matrix is
    still not positive definite at the jitter ceiling.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"{what}: expected a square matrix, got shape {mat.shape}")
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(mat) / mat.shape[0]
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = _JITTER_START * scale
    eye = np.eye(mat.shape[0])
    while jitter <= _JITTER_LIMIT * scale * (1.0 + 1e-12):
        try:
            return np.linalg.cholesky(mat + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"{what}: Cholesky failed up to jitter {_JITTER_LIMIT:g}*trace/d"
    )


class CovarianceFactor:
    """Abstract SPD covariance exposed through its actions.

    Subclasses implement ``matvec`` (Sigma x), ``solve`` (Sigma^{-1} x),
    ``logdet`` (log det Sigma), ``sqrt_matvec`` (S x with Sigma = S S^T) and
    the precision square root ``prec_sqrt_matvec`` (L^T x) /
    ``prec_sqrt_rmatvec`` (L x) with Sigma^{-1} = L L^T.
    """

    dim = None

    def matvec(self, x):
        raise NotImplementedError

    def solve(self, x):
        raise NotImplementedError

    def logdet(self):
        raise NotImplementedError

    def sqrt_matvec(self, x):
        raise NotImplementedError

    def prec_sqrt_matvec(self, x):
        raise NotImplementedError

    def prec_sqrt_rmatvec(self, x):
        raise NotImplementedError

    def quad_prec(self, x):
        """Quadratic form x^T Sigma^{-1} x."""
        y = self.prec_sqrt_matvec(x)
        return float(y @ y)


class DiagonalFactor(CovarianceFactor):
    """Diagonal covariance diag(v) with v > 0 elementwise."""

    def __init__(self, diag):
        diag = np.atleast_1d(np.asarray(diag, dtype=float))
        if diag.ndim != 1:
            raise ShapeError("diagonal covariance: expected a vector")
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            raise DomainError("diagonal covariance: entries must be finite and > 0")
        self.diag = diag
        self.dim = diag.size
        self._sqrt = np.sqrt(diag)
        self._isqrt = 1.0 / self._sqrt

    @staticmethod
    def _bcast(vec, x):
        # scale rows for both vectors and (d, k) column stacks
        x = np.asarray(x, dtype=float)
        return vec * x if x.ndim == 1 else vec[:, None] * x

    def matvec(self, x):
        return self._bcast(self.diag, x)

    def solve(self, x):
        return self._bcast(1.0 / self.diag, x)

    def logdet(self):
        return float(np.sum(np.log(self.diag)))

    def sqrt_matvec(self, x):
        return self._bcast(self._sqrt, x)

    def prec_sqrt_matvec(self, x):
        return self._bcast(self._isqrt, x)

    def prec_sqrt_rmatvec(self, x):
        return self._bcast(self._isqrt, x)


class DenseFactor(CovarianceFactor):
    """Dense SPD covariance held through its lower Cholesky factor."""

    def __init__(self, mat, what="covariance"):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ShapeError(f"{what}: expected a square matrix")
        if not np.all(np.isfinite(mat)):
            raise DomainError(f"{what}: non-finite entries")
        asym = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
        if asym > 1e-10 * max(1.0, np.max(np.abs(mat))):
            raise DomainError(f"{what}: matrix is not symmetric")
        self.mat = 0.5 * (mat + mat.T)
        try:
            self.chol = np.linalg.cholesky(self.mat)
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"{what}: matrix is not positive definite") from exc
        self.dim = mat.shape[0]

    def matvec(self, x):
        return self.mat @ x

    def solve(self, x):
        y = sla.solve_triangular(self.chol, x, lower=True)
        return sla.solve_triangular(self.chol.T, y, lower=False)

    def logdet(self):
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    def sqrt_matvec(self, x):
        return self.chol @ x

    # Sigma^{-1} = L^{-T} L^{-1} with L = self.chol, so the precision factor
    # is L2 = L^{-T}: L2^T x = L^{-1} x and L2 x = L^{-T} x.
    def prec_sqrt_matvec(self, x):
        return sla.solve_triangular(self.chol, x, lower=True)

    def prec_sqrt_rmatvec(self, x):
        return sla.solve_triangular(self.chol.T, x, lower=False)


def as_covariance_factor(obj, dim=None, what="covariance"):
    """Coerce scalars, vectors and matrices into a CovarianceFactor."""
    if isinstance(obj, CovarianceFactor):
        return obj
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 0:
        if dim is None:
            raise ShapeError(f"{what}: scalar needs an explicit dimension")
        return DiagonalFactor(np.full(dim, float(arr)))
    if arr.ndim == 1:
        return DiagonalFactor(arr)
    return DenseFactor(arr, what=what)
