"""Multilevel orthonormal Haar transform with periodic boundary handling.

Coefficient layout: one scaling band followed by detail bands from coarse to
fine, i.e. for n = 2^L and ``levels`` decomposition steps

    [ a_levels | d_levels | d_{levels-1} | ... | d_1 ],

where d_j holds n / 2^j entries.  Each step is orthonormal (analysis filters
(1,1)/sqrt(2) and (1,-1)/sqrt(2)), so the full transform is orthonormal and
norm-preserving.
"""

import numpy as np

from .errors import ArgError, ShapeError
from .operators import FunctionMap

__all__ = ["HaarTransform", "haar_forward", "haar_inverse"]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def _check_length(n, levels):
    if n < 2 or (n & (n - 1)) != 0:
        raise ShapeError(f"signal length must be a power of two, got {n}")
    max_levels = int(np.log2(n))
    if not 1 <= levels <= max_levels:
        raise ArgError(f"levels must lie in [1, {max_levels}] for length {n}")


class HaarTransform:
    """Forward/inverse multilevel Haar analysis on length-2^L signals."""

    def __init__(self, n, levels):
        _check_length(n, levels)
        self.n = int(n)
        self.levels = int(levels)

    def forward(self, signal):
        """Analysis: signal -> coefficients (scaling, then coarse-to-fine details)."""
        s = np.asarray(signal, dtype=float).reshape(-1)
        if s.size != self.n:
            raise ShapeError(f"expected length {self.n}, got {s.size}")
        out = np.empty(self.n)
        approx = s
        write_end = self.n
        for _ in range(self.levels):
            even = approx[0::2]
            odd = approx[1::2]
            detail = (even - odd) * _INV_SQRT2
            approx = (even + odd) * _INV_SQRT2
            write_start = write_end - detail.size
            out[write_start:write_end] = detail
            write_end = write_start
        out[:write_end] = approx
        return out

    def inverse(self, coeffs):
        """Synthesis: coefficients -> signal."""
        x = np.asarray(coeffs, dtype=float).reshape(-1)
        if x.size != self.n:
            raise ShapeError(f"expected length {self.n}, got {x.size}")
        scale_len = self.n >> self.levels
        approx = x[:scale_len].copy()
        read_start = scale_len
        for _ in range(self.levels):
            detail = x[read_start : read_start + approx.size]
            even = (approx + detail) * _INV_SQRT2
            odd = (approx - detail) * _INV_SQRT2
            merged = np.empty(2 * approx.size)
            merged[0::2] = even
            merged[1::2] = odd
            approx = merged
            read_start += detail.size
        return approx

    def level_labels(self):
        """Wavelet level of each coefficient, in {1, ..., levels}.

        The scaling band shares level 1 with the coarsest detail band; the
        finest detail band carries level ``levels``.
        """
        labels = np.empty(self.n, dtype=int)
        scale_len = self.n >> self.levels
        labels[:scale_len] = 1
        pos = scale_len
        for j in range(self.levels, 0, -1):
            size = self.n >> j
            labels[pos : pos + size] = self.levels - j + 1
            pos += size
        return labels

    def synthesis_map(self):
        """The inverse transform as a LinearMap (adjoint = forward transform)."""
        return FunctionMap((self.n, self.n), self.inverse, self.forward)

    def analysis_map(self):
        """The forward transform as a LinearMap (adjoint = inverse transform)."""
        return FunctionMap((self.n, self.n), self.forward, self.inverse)


def haar_forward(signal, levels):
    return HaarTransform(len(signal), levels).forward(signal)


def haar_inverse(coeffs, levels):
    return HaarTransform(len(coeffs), levels).inverse(coeffs)
