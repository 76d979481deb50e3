"""Lightweight linear-operator wrappers for forward models.

Forward operators enter the library either as explicit matrices (dense or
scipy.sparse) or as matrix-free compositions (blur after inverse wavelet).
``LinearMap`` is the minimal shared surface: shape, products with the matrix
and its transpose, and materialization for the dense code paths.
"""

import numpy as np
from scipy import sparse

from .errors import ShapeError

__all__ = ["LinearMap", "MatrixMap", "FunctionMap", "CompositeMap", "as_linear_map"]


class LinearMap:
    """A real linear map R^d -> R^m."""

    shape = None  # (m, d)

    def matvec(self, x):
        raise NotImplementedError

    def rmatvec(self, y):
        raise NotImplementedError

    def to_array(self):
        """Dense materialization (column-by-column for matrix-free maps)."""
        m, d = self.shape
        out = np.empty((m, d))
        e = np.zeros(d)
        for j in range(d):
            e[j] = 1.0
            out[:, j] = self.matvec(e)
            e[j] = 0.0
        return out

    @property
    def is_explicit(self):
        return False


class MatrixMap(LinearMap):
    """Wrap an explicit dense or sparse matrix."""

    def __init__(self, mat):
        if sparse.issparse(mat):
            self.mat = mat.tocsr()
        else:
            self.mat = np.asarray(mat, dtype=float)
            if self.mat.ndim != 2:
                raise ShapeError("forward matrix must be 2-D")
        self.shape = self.mat.shape

    def matvec(self, x):
        return self.mat @ x

    def rmatvec(self, y):
        return self.mat.T @ y

    def to_array(self):
        if sparse.issparse(self.mat):
            return self.mat.toarray()
        return self.mat

    @property
    def is_explicit(self):
        return True


class FunctionMap(LinearMap):
    """Matrix-free map given by a matvec/rmatvec callable pair."""

    def __init__(self, shape, matvec, rmatvec):
        self.shape = tuple(shape)
        self._matvec = matvec
        self._rmatvec = rmatvec

    def matvec(self, x):
        return self._matvec(x)

    def rmatvec(self, y):
        return self._rmatvec(y)


class CompositeMap(LinearMap):
    """Product ``outer @ inner`` of two linear maps."""

    def __init__(self, outer, inner):
        outer = as_linear_map(outer)
        inner = as_linear_map(inner)
        if outer.shape[1] != inner.shape[0]:
            raise ShapeError(
                f"cannot compose maps with shapes {outer.shape} and {inner.shape}"
            )
        self.outer = outer
        self.inner = inner
        self.shape = (outer.shape[0], inner.shape[1])

    def matvec(self, x):
        return self.outer.matvec(self.inner.matvec(x))

    def rmatvec(self, y):
        return self.inner.rmatvec(self.outer.rmatvec(y))


def as_linear_map(obj):
    if isinstance(obj, LinearMap):
        return obj
    return MatrixMap(obj)
