"""Linear randomize-then-optimize sampling of the Gaussian posterior component.

A draw from N(mu(w, y), Sigma(w)) is the solution of the randomized linear
least-squares problem

    min_a || M(w) a - z ||^2,
    M(w) = [At; L2(w)^T],  z = [yt + zeta; L2(w)^T mu_pr + gamma],

with At the noise-whitened forward map, Sigma_pr(w)^{-1} = L2 L2^T and
independent standard normal vectors zeta (length m) and gamma (length d).
The normal equations of this problem are exactly Sigma(w)^{-1} x = rhs + u
with u ~ N(0, Sigma(w)^{-1}), so a solve to tight tolerance is an exact draw.
The solver is CGLS with optional Jacobi column scaling (a change of variables
that leaves the solution untouched but clusters the spectrum).
"""

import numpy as np
from scipy import sparse

from .errors import NumericalError, ShapeError
from .linalg import DiagonalFactor

__all__ = ["cgls", "RtoWorkspace", "linear_rto_sample", "linear_rto_draws"]

CGLS_RTOL = 1e-10


def cgls(matvec, rmatvec, z, dim, rtol=CGLS_RTOL, max_iter=None, col_scale=None):
    """Solve min_x ||M x - z||_2 by conjugate gradients on the normal equations.

    Parameters
    ----------
    matvec, rmatvec : callables for M and M^T on (dim, B) column stacks
    z : ndarray, shape (k,) or (k, B)
    dim : number of unknowns
    col_scale : optional (dim,) positive vector; solves in scaled variables
        x = u / col_scale (plain right preconditioning).

    Returns
    -------
    x : ndarray with the shape of the unknowns ((dim,) or (dim, B))
    iters : int, iterations used

    Stops when the normal-equations residual ||M^T(Mx - z)|| falls below
    rtol * ||M^T z|| per column; raises NumericalError otherwise.
    """
    single = z.ndim == 1
    zz = z[:, None] if single else z
    n_cols = zz.shape[1]
    if max_iter is None:
        max_iter = 10 * dim

    if col_scale is not None:
        scale = np.asarray(col_scale, dtype=float)
        mv = lambda u: matvec(u / scale[:, None])
        rmv = lambda r: rmatvec(r) / scale[:, None]
    else:
        mv = matvec
        rmv = rmatvec

    x = np.zeros((dim, n_cols))
    r = zz.copy()
    s = rmv(r)
    gamma = np.einsum("ij,ij->j", s, s)
    gamma0 = gamma.copy()
    tol2 = (rtol**2) * gamma0  # squared per-column thresholds
    active = gamma > tol2  # always False when gamma0 == 0
    p = s.copy()
    iters = 0
    while np.any(active) and iters < max_iter:
        q = mv(p)
        qq = np.einsum("ij,ij->j", q, q)
        alpha = np.where(active & (qq > 0.0), gamma / np.where(qq > 0.0, qq, 1.0), 0.0)
        x += alpha * p
        r -= alpha * q
        s = rmv(r)
        gamma_new = np.einsum("ij,ij->j", s, s)
        beta = np.where(active, gamma_new / np.where(gamma > 0.0, gamma, 1.0), 0.0)
        p = s + beta * p
        gamma = gamma_new
        active = active & (gamma > tol2)
        iters += 1
    if np.any(active):
        worst = float(np.max(np.sqrt(gamma[active] / gamma0[active])))
        raise NumericalError(
            f"CGLS did not converge in {max_iter} iterations "
            f"(worst relative residual {worst:.3e})"
        )
    if col_scale is not None:
        x = x / scale[:, None]
    return (x[:, 0], iters) if single else (x, iters)


class RtoWorkspace:
    """Reusable whitened-operator state for repeated posterior-component draws."""

    def __init__(self, model):
        self.model = model
        self.at = model.whitened_forward()
        self.yt = model.whitened_data()
        self.m, self.d = model.m, model.d
        if sparse.issparse(self.at):
            self.gram_diag = np.asarray(self.at.multiply(self.at).sum(axis=0)).reshape(-1)
        else:
            self.gram_diag = np.einsum("ij,ij->j", self.at, self.at)

    def draw(self, prior_mean, prior_factor, n, rng, rtol=CGLS_RTOL, max_iter=None):
        """n independent draws from N(mu(w,y), Sigma(w)), shape (n, d)."""
        prior_mean = np.asarray(prior_mean, dtype=float).reshape(-1)
        if prior_mean.size != self.d or prior_factor.dim != self.d:
            raise ShapeError("prior component dimension does not match the model")
        zeta = rng.standard_normal((self.m, n))
        gamma = rng.standard_normal((self.d, n))
        top = self.yt[:, None] + zeta
        bottom = prior_factor.prec_sqrt_matvec(prior_mean)[:, None] + gamma
        z = np.vstack([top, bottom])

        at = self.at

        def matvec(x):
            return np.vstack([np.asarray(at @ x), prior_factor.prec_sqrt_matvec(x)])

        def rmatvec(res):
            return np.asarray(at.T @ res[: self.m]) + prior_factor.prec_sqrt_rmatvec(
                res[self.m :]
            )

        if isinstance(prior_factor, DiagonalFactor):
            col_scale = np.sqrt(self.gram_diag + 1.0 / prior_factor.diag)
        else:
            col_scale = None
        x, _ = cgls(
            matvec, rmatvec, z, self.d, rtol=rtol, max_iter=max_iter, col_scale=col_scale
        )
        return x.T


def linear_rto_draws(model, spec, w, n, rng, rtol=CGLS_RTOL, max_iter=None):
    """n exact draws from the posterior component at mixing variable ``w``."""
    mean, factor = spec.component(w)
    ws = RtoWorkspace(model)
    return ws.draw(mean, factor, n, rng, rtol=rtol, max_iter=max_iter)


def linear_rto_sample(model, spec, w, rng, rtol=CGLS_RTOL, max_iter=None):
    """One exact draw from N(mu(w, y), Sigma(w))."""
    return linear_rto_draws(model, spec, w, 1, rng, rtol=rtol, max_iter=max_iter)[0]
