"""Evaluators for the Laplace-prior posterior mixing density.

With exponential mixing rates ``lam`` and whitened forward ``At`` (rows of A
scaled by the noise precision square root), the unnormalized log posterior
mixing density is

    log pi(w|y) = -lam.w - 1/2 log det M(w) + 1/2 q(w),
    M(w) = I_d + L_w^{1/2} G L_w^{1/2},   G = At^T At,
    q(w) = (L_w^{1/2} b)^T M(w)^{-1} (L_w^{1/2} b),   b = At^T yt,

which is well defined on the closed positive orthant.  Gradient and Hessian
use the resolvent K(w) = (G^{-1} + L_w)^{-1}; G may be singular, so K is
always evaluated through one of the algebraically equivalent stabilized
forms

    K(w) = At^T S(w)^{-1} At,             S(w) = I_m + At L_w At^T,
    K(w) = L_w^{-1} - L_w^{-1} C(w)^{-1} L_w^{-1},   C(w) = G + L_w^{-1},

never through an explicit G^{-1}.  Three further parameterizations are
provided: the log-transformed density over v = log(w) (adds the Jacobian
term sum(v)), a Schur-complement evaluator over a selected coordinate block
that touches only r x r linear algebra per call, and a sparse-support
objective for nonnegative MAP estimation that works in r x r (or m x m)
blocks via the permutation and Woodbury identities.

Evaluators are immutable after construction; every evaluation is a pure
function of its inputs.
"""

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve, solve_triangular

from .errors import DomainError, ShapeError, SupportError
from .linalg import jittered_cholesky

__all__ = [
    "WSpaceEvaluator",
    "VSpaceEvaluator",
    "ReducedVEvaluator",
    "log_density_w",
    "grad_log_density_w",
    "hessian_log_density_w",
    "log_density_v",
    "grad_log_density_v",
    "reduced_log_density_vI",
    "reduced_grad_vI",
    "sparse_map_objective",
]

# Log-variables are clamped to this range inside exp(); beyond the hard limit
# the evaluator refuses the point entirely.
V_CLAMP = 45.0
V_HARD_LIMIT = 700.0

# Densified grams are cached up to this dimension.
GRAM_DENSE_LIMIT = 4096

# Chunk width for diag(At^T S^{-1} At) with wide operators.
_DIAG_CHUNK = 2048


def _check_w(w, d, allow_zero):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != d:
        raise ShapeError(f"w has length {w.size}, expected {d}")
    if not np.all(np.isfinite(w)):
        raise SupportError("w contains non-finite entries")
    if allow_zero:
        if np.any(w < 0.0):
            raise SupportError("w has negative entries")
    else:
        if np.any(w <= 0.0):
            raise SupportError("w must be strictly positive")
    return w


class WSpaceEvaluator:
    """Cached evaluator of log pi(w|y), its gradient and Hessian.

    Parameters
    ----------
    model : LinearGaussianModel
    rates : array_like, shape (d,)
        Exponential mixing rates lambda (all > 0).
    """

    def __init__(self, model, rates):
        self.model = model
        self.rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if self.rates.size != model.d:
            raise ShapeError("rates length does not match model dimension")
        if np.any(self.rates <= 0.0) or not np.all(np.isfinite(self.rates)):
            raise DomainError("mixing rates must be finite and > 0")
        self.d = model.d
        self.m = model.m
        at = model.whitened_forward()
        self.at_sparse = sparse.issparse(at)
        self.at = at
        self.yt = model.whitened_data()
        self.bhat = np.asarray(self.at.T @ self.yt).reshape(-1)
        # measurement-space factorizations when they are the smaller ones
        self._prefer_m = self.at_sparse or (self.m < self.d)
        self._gram = None
        self._gram_sparse = None
        if not self.at_sparse and self.d <= GRAM_DENSE_LIMIT:
            self._gram = at.T @ at
        elif self.at_sparse:
            self._gram_sparse = (at.T @ at).tocsc()
        if self._gram is not None:
            self.gram_diag = np.diag(self._gram).copy()
        elif self._gram_sparse is not None:
            self.gram_diag = self._gram_sparse.diagonal().copy()
        else:
            self.gram_diag = np.einsum("ij,ij->j", at, at)
        # dropped additive constant relative to the w-space convention
        # (log density at w = 0 equals 0)
        self.log_offset = 0.0

    # -- gram pieces ------------------------------------------------------

    def gram_dense(self):
        if self._gram is None:
            raise DomainError(
                f"dense gram unavailable for d={self.d} with a sparse operator"
            )
        return self._gram

    def gram_block(self, idx):
        """G[idx, idx] as a dense array."""
        if self._gram is not None:
            return self._gram[np.ix_(idx, idx)]
        if self._gram_sparse is not None:
            return np.asarray(self._gram_sparse[:, idx].tocsr()[idx].todense())
        cols = self.at[:, idx]
        return cols.T @ cols

    def gram_cols(self, idx):
        """G[:, idx] as a dense (d, r) array."""
        if self._gram is not None:
            return self._gram[:, idx]
        if self._gram_sparse is not None:
            return np.asarray(self._gram_sparse[:, idx].todense())
        return self.at.T @ self.at[:, idx]

    def gram_cols_sparse(self, idx):
        """G[:, idx] in sparse form when the gram is sparse, else dense."""
        if self._gram_sparse is not None:
            return self._gram_sparse[:, idx]
        return self.gram_cols(idx)

    def gram_cross(self, rows, cols_idx):
        """G[rows, cols_idx] as a dense array."""
        if self._gram is not None:
            return self._gram[np.ix_(rows, cols_idx)]
        if self._gram_sparse is not None:
            return np.asarray(self._gram_sparse[:, cols_idx].tocsr()[rows].todense())
        return self.at[:, rows].T @ self.at[:, cols_idx]

    # -- factorizations ---------------------------------------------------

    def _chol_m_space(self, w):
        """Cholesky of S(w) = I_m + At L_w At^T."""
        if self.at_sparse:
            s = (self.at @ sparse.diags(w) @ self.at.T).toarray()
        else:
            s = (self.at * w) @ self.at.T
        s[np.diag_indices_from(s)] += 1.0
        chol, _ = jittered_cholesky(s, what="measurement-space system")
        return chol

    def _chol_d_space(self, w):
        """Cholesky of M(w) = I_d + L_w^{1/2} G L_w^{1/2}."""
        sw = np.sqrt(w)
        m = sw[:, None] * self.gram_dense() * sw[None, :]
        m[np.diag_indices_from(m)] += 1.0
        chol, _ = jittered_cholesky(m, what="scaled gram system")
        return chol

    # -- log density ------------------------------------------------------

    def log_density_w(self, w):
        """Unnormalized log pi(w|y); defined for w >= 0 elementwise."""
        w = _check_w(w, self.d, allow_zero=True)
        if self._prefer_m:
            chol = self._chol_m_space(w)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            q = self.at @ (w * self.bhat)
            t = cho_solve((chol, True), q)
            quad = float(np.sum(w * self.bhat**2) - q @ t)
        else:
            chol = self._chol_d_space(w)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            sb = np.sqrt(w) * self.bhat
            quad = float(sb @ cho_solve((chol, True), sb))
        return float(-self.rates @ w - 0.5 * logdet + 0.5 * quad)

    # -- resolvent pieces ---------------------------------------------------

    def _diag_resolvent_m(self, chol):
        """diag(At^T S^{-1} At) computed in column chunks."""
        out = np.empty(self.d)
        for start in range(0, self.d, _DIAG_CHUNK):
            stop = min(start + _DIAG_CHUNK, self.d)
            block = self.at[:, start:stop]
            if sparse.issparse(block):
                block = block.toarray()
            t = solve_triangular(chol, block, lower=True)
            out[start:stop] = np.einsum("ij,ij->j", t, t)
        return out

    def _grad_pieces(self, w):
        """Return (diag K(w), z(w)) with K = (G^{-1}+L_w)^{-1}, z = K G^{-1} b."""
        if self._prefer_m:
            chol = self._chol_m_space(w)
            diag_k = self._diag_resolvent_m(chol)
            q = self.at @ (w * self.bhat)
            z = self.bhat - self.at.T @ cho_solve((chol, True), q)
            z = np.asarray(z).reshape(-1)
        else:
            # stabilized d-space form; requires strictly positive w
            c = self.gram_dense() + np.diag(1.0 / w)
            chol, _ = jittered_cholesky(c, what="gram-plus-precision system")
            cinv = cho_solve((chol, True), np.eye(self.d))
            diag_k = 1.0 / w - np.diag(cinv) / w**2
            z = cho_solve((chol, True), self.bhat) / w
        return diag_k, z

    def grad_log_density_w(self, w):
        """Gradient -lam - 1/2 diag K(w) + 1/2 z(w)^2; requires w > 0."""
        w = _check_w(w, self.d, allow_zero=False)
        diag_k, z = self._grad_pieces(w)
        return -self.rates - 0.5 * diag_k + 0.5 * z**2

    def grad_log_marginal_w(self, w):
        """Gradient of log pi(y|w) alone (mixing-prior term removed)."""
        return self.grad_log_density_w(w) + self.rates

    def value_and_grad_w(self, w):
        """(log density, gradient) sharing one factorization; w > 0."""
        w = _check_w(w, self.d, allow_zero=False)
        if self._prefer_m:
            chol = self._chol_m_space(w)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            q = self.at @ (w * self.bhat)
            t = cho_solve((chol, True), q)
            quad = float(np.sum(w * self.bhat**2) - q @ t)
            diag_k = self._diag_resolvent_m(chol)
            z = np.asarray(self.bhat - self.at.T @ t).reshape(-1)
        else:
            c = self.gram_dense() + np.diag(1.0 / w)
            chol, _ = jittered_cholesky(c, what="gram-plus-precision system")
            # log det M(w) = sum log w + log det C(w) for strictly positive w,
            # and q(w) = b^T C(w)^{-1} b
            logdet = float(np.sum(np.log(w))) + 2.0 * np.sum(np.log(np.diag(chol)))
            cinv_b = cho_solve((chol, True), self.bhat)
            quad = float(self.bhat @ cinv_b)
            cinv = cho_solve((chol, True), np.eye(self.d))
            diag_k = 1.0 / w - np.diag(cinv) / w**2
            z = cinv_b / w
        value = float(-self.rates @ w - 0.5 * logdet + 0.5 * quad)
        grad = -self.rates - 0.5 * diag_k + 0.5 * z**2
        return value, grad

    # -- Hessian ------------------------------------------------------------

    def _resolvent_full(self, w):
        """Dense K(w) = (G^{-1} + L_w)^{-1}; w >= 0 via the S-form."""
        if self._prefer_m:
            chol = self._chol_m_space(w)
            at = self.at.toarray() if self.at_sparse else self.at
            t = solve_triangular(chol, at, lower=True)
            return t.T @ t
        c = self.gram_dense() + np.diag(1.0 / w)
        chol, _ = jittered_cholesky(c, what="gram-plus-precision system")
        cinv = cho_solve((chol, True), np.eye(self.d))
        iw = 1.0 / w
        return np.diag(iw) - cinv * np.outer(iw, iw)

    def hessian_log_density_w(self, w, idx=None):
        """Hessian 1/2 K^{.2} - L_z K L_z of log pi(w|y).

        ``idx`` restricts to the (idx, idx) block; coordinates outside a
        given ``idx`` may sit at w = 0 exactly (sparse MAP support), in which
        case the restricted block is computed with r x r Woodbury algebra.
        """
        w = _check_w(w, self.d, allow_zero=True)
        if idx is None:
            if np.any(w == 0.0) and not self._prefer_m:
                raise SupportError("full Hessian requires w > 0 for this operator")
            k = self._resolvent_full(w)
            _, z = self._grad_pieces(w) if np.all(w > 0.0) else (None, None)
            if z is None:
                q = self.at @ (w * self.bhat)
                chol = self._chol_m_space(w)
                z = np.asarray(
                    self.bhat - self.at.T @ cho_solve((chol, True), q)
                ).reshape(-1)
            return 0.5 * k * k - np.outer(z, z) * k
        idx = np.asarray(idx, dtype=int)
        off = np.setdiff1d(np.arange(self.d), idx)
        if np.all(w > 0.0):
            if self._prefer_m:
                chol = self._chol_m_space(w)
                block = self.at[:, idx]
                if sparse.issparse(block):
                    block = block.toarray()
                t = solve_triangular(chol, block, lower=True)
                k_block = t.T @ t
                q = self.at @ (w * self.bhat)
                z = np.asarray(
                    self.bhat - self.at.T @ cho_solve((chol, True), q)
                ).reshape(-1)
                z_block = z[idx]
            else:
                k = self._resolvent_full(w)
                _, z = self._grad_pieces(w)
                k_block = k[np.ix_(idx, idx)]
                z_block = z[idx]
        else:
            if np.any(w[off] != 0.0) or np.any(w[idx] <= 0.0):
                raise SupportError(
                    "restricted Hessian with zeros requires support exactly on idx"
                )
            b = self.gram_block(idx)
            g = b + np.diag(1.0 / w[idx])
            chol, _ = jittered_cholesky(g, what="support-restricted system")
            k_block = b - b @ cho_solve((chol, True), b)
            z_block = self.bhat[idx] - b @ cho_solve((chol, True), self.bhat[idx])
        h = 0.5 * k_block * k_block - np.outer(z_block, z_block) * k_block
        return 0.5 * (h + h.T)


class VSpaceEvaluator:
    """log pi(v|y) for v = log(w), including the Jacobian term sum(v)."""

    def __init__(self, inner):
        self.inner = inner
        self.d = inner.d
        self.rates = inner.rates
        self.log_offset = inner.log_offset

    def _check_v(self, v):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.d:
            raise ShapeError(f"v has length {v.size}, expected {self.d}")
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > V_HARD_LIMIT):
            raise SupportError(
                "log-mixing variable out of range; rescale the problem or keep "
                f"|v| <= {V_HARD_LIMIT:g}"
            )
        return np.clip(v, -V_CLAMP, V_CLAMP)

    def log_density_v(self, v):
        vc = self._check_v(v)
        return self.inner.log_density_w(np.exp(vc)) + float(np.sum(vc))

    def grad_log_density_v(self, v):
        vc = self._check_v(v)
        w = np.exp(vc)
        gw = self.inner.grad_log_density_w(w)
        grad = w * gw + 1.0
        clipped = np.abs(np.asarray(v, dtype=float).reshape(-1)) > V_CLAMP
        grad[clipped] = 0.0
        return grad

    def value_and_grad_v(self, v):
        vc = self._check_v(v)
        w = np.exp(vc)
        value, gw = self.inner.value_and_grad_w(w)
        grad = w * gw + 1.0
        clipped = np.abs(np.asarray(v, dtype=float).reshape(-1)) > V_CLAMP
        grad[clipped] = 0.0
        return value + float(np.sum(vc)), grad


class ReducedVEvaluator:
    """Schur-reduced evaluator of the coordinate-selected density over v_I.

    The not-selected block is fixed at the prior mean in w, i.e.
    v_J = -log(lambda_J); the determinant and quadratic form then reduce to
    the r x r matrix Z(v_I) = L_{exp(v_I)}^{-1} + (B - C D^{-1} C^T) with
    constant blocks B = G[I,I], C = G[I,J], D = G[J,J] + L_{lambda_J}.
    Construction is O(|J|^3) once; evaluations are O(r^3).
    """

    def __init__(self, inner, split):
        self.inner = inner
        self.split = split
        sel = np.asarray(split.selected, dtype=int)
        comp = np.asarray(split.complement, dtype=int)
        if sel.size < 1:
            raise DomainError("reduced evaluator needs at least one selected coordinate")
        self.selected = sel
        self.complement = comp
        self.r = sel.size
        self.rates_sel = inner.rates[sel]
        lam_j = inner.rates[comp]
        self.fixed_vj = -np.log(lam_j)
        b = inner.gram_block(sel)
        if comp.size:
            c = inner.gram_cross(sel, comp)
            dmat = inner.gram_block(comp) + np.diag(lam_j)
            chol_d, _ = jittered_cholesky(dmat, what="complement block")
            self.logdet_d = float(2.0 * np.sum(np.log(np.diag(chol_d))))
            self.dinv_ct = cho_solve((chol_d, True), c.T)
            schur = b - c @ self.dinv_ct
            dinv_bj = cho_solve((chol_d, True), inner.bhat[comp])
            self.g = inner.bhat[sel] - c @ dinv_bj
            self.quad_j = float(inner.bhat[comp] @ dinv_bj)
        else:
            self.logdet_d = 0.0
            self.dinv_ct = np.zeros((0, self.r))
            schur = b
            self.g = inner.bhat[sel].copy()
            self.quad_j = 0.0
        self.schur = 0.5 * (schur + schur.T)
        # dropped constant relative to the full v-space evaluator at the
        # embedded point (v_I, fixed v_J)
        self.log_offset = float(
            -comp.size
            - 0.5 * self.logdet_d
            + 0.5 * self.quad_j
            - 0.5 * np.sum(np.log(lam_j))
        ) + inner.log_offset

    def _check_v(self, v_i):
        v_i = np.asarray(v_i, dtype=float).reshape(-1)
        if v_i.size != self.r:
            raise ShapeError(f"v_I has length {v_i.size}, expected {self.r}")
        if not np.all(np.isfinite(v_i)) or np.any(np.abs(v_i) > V_HARD_LIMIT):
            raise SupportError("reduced log-mixing variable out of range")
        return np.clip(v_i, -V_CLAMP, V_CLAMP)

    def _z_chol(self, w_i):
        z = self.schur.copy()
        z[np.diag_indices_from(z)] += 1.0 / w_i
        chol, _ = jittered_cholesky(z, what="reduced Schur system")
        return chol

    def log_density(self, v_i):
        vc = self._check_v(v_i)
        w_i = np.exp(vc)
        chol = self._z_chol(w_i)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        t = cho_solve((chol, True), self.g)
        return float(
            -self.rates_sel @ w_i - 0.5 * logdet + 0.5 * self.g @ t + 0.5 * np.sum(vc)
        )

    def grad(self, v_i):
        return self.value_and_grad(v_i)[1]

    def value_and_grad(self, v_i):
        vc = self._check_v(v_i)
        w_i = np.exp(vc)
        chol = self._z_chol(w_i)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        zinv = cho_solve((chol, True), np.eye(self.r))
        t = zinv @ self.g
        value = float(
            -self.rates_sel @ w_i - 0.5 * logdet + 0.5 * self.g @ t + 0.5 * np.sum(vc)
        )
        iw = 1.0 / w_i
        grad = -self.rates_sel * w_i + 0.5 * iw * np.diag(zinv) + 0.5 * iw * t**2 + 0.5
        clipped = np.abs(np.asarray(v_i, dtype=float).reshape(-1)) > V_CLAMP
        grad[clipped] = 0.0
        return value, grad

    def embed(self, v_i):
        """Full-length v with the complement fixed at its prior mean."""
        v = np.empty(self.inner.d)
        v[self.selected] = v_i
        v[self.complement] = self.fixed_vj
        return v


def sparse_map_objective(ev, w):
    """Value and gradient of -log pi(w|y) exploiting the support of w.

    ``w`` must be elementwise >= 0; the support I = {i : w_i > 0} drives an
    r x r determinant (permutation identity) and an r x r Woodbury solve for
    the gradient.  When the support outgrows the measurement dimension the
    m x m form is cheaper and is used instead.
    """
    w = _check_w(w, ev.d, allow_zero=True)
    lam = ev.rates
    idx = np.flatnonzero(w > 0.0)
    r = idx.size
    if r == 0:
        value = 0.0
        grad = lam + 0.5 * ev.gram_diag - 0.5 * ev.bhat**2
        return value, grad
    if ev._prefer_m and r > ev.m:
        chol = ev._chol_m_space(w)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        q = ev.at @ (w * ev.bhat)
        t = cho_solve((chol, True), q)
        quad = float(np.sum(w * ev.bhat**2) - q @ t)
        diag_k = ev._diag_resolvent_m(chol)
        z = np.asarray(ev.bhat - ev.at.T @ t).reshape(-1)
        value = float(lam @ w + 0.5 * logdet - 0.5 * quad)
        grad = lam + 0.5 * diag_k - 0.5 * z**2
        return value, grad
    w_i = w[idx]
    sw = np.sqrt(w_i)
    b_block = ev.gram_block(idx)
    b_perm = sw[:, None] * b_block * sw[None, :]
    b_perm[np.diag_indices_from(b_perm)] += 1.0
    chol_b, _ = jittered_cholesky(b_perm, what="support-permuted system")
    logdet = 2.0 * np.sum(np.log(np.diag(chol_b)))
    sb = sw * ev.bhat[idx]
    quad = float(sb @ cho_solve((chol_b, True), sb))
    value = float(lam @ w + 0.5 * logdet - 0.5 * quad)
    # Woodbury: (G^{-1} + P_I^T L_{w_I} P_I)^{-1} = G - G_{:,I}(L^{-1}+B)^{-1}G_{I,:}
    g_mat = b_block + np.diag(1.0 / w_i)
    chol_g, _ = jittered_cholesky(g_mat, what="support Woodbury system")
    cols = ev.gram_cols_sparse(idx)
    z = ev.bhat - np.asarray(cols @ cho_solve((chol_g, True), ev.bhat[idx])).reshape(-1)
    if sparse.issparse(cols):
        # correction diag(G_{:,I} Ginv G_{I,:}) via the sparse columns
        ginv = cho_solve((chol_g, True), np.eye(r))
        proj = np.asarray(cols @ ginv)
        corr = np.asarray(cols.multiply(proj).sum(axis=1)).reshape(-1)
    else:
        t = solve_triangular(chol_g, cols.T, lower=True)
        corr = np.einsum("ij,ij->j", t, t)
    diag_k = ev.gram_diag - corr
    grad = lam + 0.5 * diag_k - 0.5 * z**2
    return value, grad


# -- module-level operation wrappers ---------------------------------------


def log_density_w(ev, w):
    return ev.log_density_w(w)


def grad_log_density_w(ev, w):
    return ev.grad_log_density_w(w)


def hessian_log_density_w(ev, w, idx=None):
    return ev.hessian_log_density_w(w, idx=idx)


def log_density_v(ev, v):
    return ev.log_density_v(v)


def grad_log_density_v(ev, v):
    return ev.grad_log_density_v(v)


def reduced_log_density_vI(ev, v_i):
    return ev.log_density(v_i)


def reduced_grad_vI(ev, v_i):
    return ev.grad(v_i)
