"""Exact sampling from box-truncated multivariate normals and exponentials.

The multivariate sampler follows the minimax exponential-tilting scheme:
reorder variables by a pivoted Cholesky that processes the most severely
truncated coordinate first, build a sequential separation-of-variables
proposal with an exponential tilt, choose the tilting vector at the saddle
point of the log acceptance ratio (a smooth nonlinear system solved by a
Newton-type root finder), and accept-reject against the saddle value.  All
proposals come from an exact one-dimensional truncated-normal generator, so
accepted draws are independent exact samples.
"""

import math
import warnings

import numpy as np
from scipy import optimize, special
from scipy.linalg import cho_solve

from .errors import DomainError, FeasibilityError, ShapeError
from .linalg import jittered_cholesky

__all__ = ["truncated_mvn_sample", "exponential_sample", "trandn"]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# largest dimension the tilting sampler accepts
DIM_LIMIT = 500

# proposals spent without a single acceptance before giving up
_MAX_FRUITLESS = 5_000_000


def _ln_phi(x):
    """log of the upper tail of N(0,1), accurate for large x (-inf at x=inf)."""
    with np.errstate(divide="ignore"):
        return -0.5 * x**2 - math.log(2.0) + np.log(special.erfcx(x / _SQRT2))


def _ln_norm_prob(a, b):
    """log P(a < Z < b) for Z ~ N(0,1), elementwise, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.zeros(np.broadcast(a, b).shape)
    a, b = np.broadcast_arrays(a, b)
    pos = a > 0.0
    if np.any(pos):
        pa = _ln_phi(a[pos])
        pb = _ln_phi(b[pos])
        p[pos] = pa + np.log1p(-np.exp(pb - pa))
    neg = b < 0.0
    if np.any(neg):
        pa = _ln_phi(-a[neg])
        pb = _ln_phi(-b[neg])
        p[neg] = pb + np.log1p(-np.exp(pa - pb))
    mid = ~(pos | neg)
    if np.any(mid):
        pa = special.erfc(-a[mid] / _SQRT2) / 2.0
        pb = special.erfc(b[mid] / _SQRT2) / 2.0
        p[mid] = np.log1p(-pa - pb)
    return p


def _ntail(rng, l, u):
    """Truncated N(0,1) on [l, u] with l > 0, via Rayleigh accept-reject."""
    c = l**2 / 2.0
    f = np.expm1(c - u**2 / 2.0)
    x = c - np.log1p(rng.random(l.size) * f)
    reject = np.flatnonzero(rng.random(l.size) ** 2 * x > c)
    while reject.size:
        cy = c[reject]
        y = cy - np.log1p(rng.random(reject.size) * f[reject])
        keep = rng.random(reject.size) ** 2 * y < cy
        x[reject[keep]] = y[keep]
        reject = reject[~keep]
    return np.sqrt(2.0 * x)


def _trnd(rng, l, u):
    """Truncated N(0,1) on a wide interval by plain accept-reject."""
    x = rng.standard_normal(l.size)
    reject = np.flatnonzero((x < l) | (x > u))
    while reject.size:
        y = rng.standard_normal(reject.size)
        keep = (y > l[reject]) & (y < u[reject])
        x[reject[keep]] = y[keep]
        reject = reject[~keep]
    return x


def _tn(rng, l, u):
    """Truncated N(0,1) on a narrow central interval by inverse transform."""
    wide = np.abs(u - l) > 2.0
    x = np.empty(l.size)
    if np.any(wide):
        x[wide] = _trnd(rng, l[wide], u[wide])
    rest = ~wide
    if np.any(rest):
        pl = special.erfc(l[rest] / _SQRT2) / 2.0
        pu = special.erfc(u[rest] / _SQRT2) / 2.0
        x[rest] = _SQRT2 * special.erfcinv(
            2.0 * (pl - (pl - pu) * rng.random(int(rest.sum())))
        )
    return x


def trandn(rng, l, u):
    """Exact draws of N(0,1) conditioned on [l_i, u_i], elementwise."""
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    if l.shape != u.shape:
        raise ShapeError("bound arrays must have equal shape")
    shape = l.shape
    l, u = l.ravel(), u.ravel()
    x = np.empty(l.size)
    a = 0.66  # tail-method threshold
    right = l > a
    if np.any(right):
        x[right] = _ntail(rng, l[right], u[right])
    left = u < -a
    if np.any(left):
        x[left] = -_ntail(rng, -u[left], -l[left])
    mid = ~(right | left)
    if np.any(mid):
        x[mid] = _tn(rng, l[mid], u[mid])
    return x.reshape(shape)


def _colperm(cov, lb, ub):
    """Pivoted Cholesky ordering by smallest conditional probability."""
    d = cov.shape[0]
    cov = cov.copy()
    lb, ub = lb.copy(), ub.copy()
    perm = np.arange(d)
    big_l = np.zeros((d, d))
    z = np.zeros(d)
    eps = 1e-10
    for j in range(d):
        pr = np.full(d, np.inf)
        rest = np.arange(j, d)
        s = np.diag(cov)[rest] - np.sum(big_l[rest, :j] ** 2, axis=1)
        s = np.sqrt(np.maximum(s, eps))
        tl = (lb[rest] - big_l[rest, :j] @ z[:j]) / s
        tu = (ub[rest] - big_l[rest, :j] @ z[:j]) / s
        pr[rest] = _ln_norm_prob(tl, tu)
        k = int(np.argmin(pr))
        jk, kj = [j, k], [k, j]
        cov[jk, :] = cov[kj, :]
        cov[:, jk] = cov[:, kj]
        big_l[jk, :] = big_l[kj, :]
        lb[jk] = lb[kj]
        ub[jk] = ub[kj]
        perm[jk] = perm[kj]
        s = cov[j, j] - big_l[j, :j] @ big_l[j, :j]
        if s < -0.01:
            raise DomainError("covariance is not positive semi-definite")
        big_l[j, j] = np.sqrt(max(s, eps))
        if j + 1 < d:
            big_l[j + 1 :, j] = (
                cov[j + 1 :, j] - big_l[j + 1 :, :j] @ big_l[j, :j]
            ) / big_l[j, j]
        tl = (lb[j] - big_l[j, :j] @ z[:j]) / big_l[j, j]
        tu = (ub[j] - big_l[j, :j] @ z[:j]) / big_l[j, j]
        w = _ln_norm_prob(tl, tu)
        z[j] = (np.exp(-0.5 * tl**2 - w) - np.exp(-0.5 * tu**2 - w)) / _SQRT2PI
    return big_l, perm, lb, ub


def _grad_psi(y, l_scaled, lb, ub):
    """Gradient and Jacobian of the saddle-point system for the tilt."""
    d = lb.size
    c = np.zeros(d)
    mu = np.zeros(d)
    x = np.zeros(d)
    x[: d - 1] = y[: d - 1]
    mu[: d - 1] = y[d - 1 :]
    c[1:] = l_scaled[1:, :] @ x
    lt = lb - mu - c
    ut = ub - mu - c
    w = _ln_norm_prob(lt, ut)
    pl = np.exp(-0.5 * lt**2 - w) / _SQRT2PI
    pu = np.exp(-0.5 * ut**2 - w) / _SQRT2PI
    big_p = pl - pu
    dfdx = -mu[: d - 1] + (big_p @ l_scaled[:, : d - 1])
    dfdm = mu - x + big_p
    grad = np.concatenate([dfdx, dfdm[:-1]])
    lt = np.where(np.isinf(lt), 0.0, lt)
    ut = np.where(np.isinf(ut), 0.0, ut)
    dp = -(big_p**2) + lt * pl - ut * pu
    dl = dp[:, None] * l_scaled
    mx = dl - np.eye(d)
    xx = l_scaled.T @ dl
    mx = mx[:-1, :-1]
    xx = xx[:-1, :-1]
    jac = np.block([[xx, mx.T], [mx, np.diag(1.0 + dp[:-1])]])
    return grad, jac


def _psy(x, mu, l_scaled, lb, ub):
    """Saddle value psi(x, mu) of the tilted log acceptance ratio."""
    x = np.append(x, 0.0)
    mu = np.append(mu, 0.0)
    c = l_scaled @ x
    lt = lb - mu - c
    ut = ub - mu - c
    return float(np.sum(_ln_norm_prob(lt, ut) + 0.5 * mu**2 - x * mu))


def _mvn_proposals(rng, n, mu, l_scaled, lb, ub):
    """n sequential proposals; returns (log ratio, Z) with Z of shape (d, n)."""
    d = lb.size
    mu_pad = np.append(mu, 0.0)
    z = np.zeros((d, n))
    logpr = np.zeros(n)
    for k in range(d):
        col = l_scaled[k, :k] @ z[:k, :]
        tl = lb[k] - mu_pad[k] - col
        tu = ub[k] - mu_pad[k] - col
        z[k, :] = mu_pad[k] + trandn(rng, tl, tu)
        logpr += _ln_norm_prob(tl, tu) + 0.5 * mu_pad[k] ** 2 - mu_pad[k] * z[k, :]
    return logpr, z


def truncated_mvn_sample(mean, precision, n, rng, lower=None):
    """n exact draws from N(mean, precision^{-1}) restricted to x > lower.

    Parameters
    ----------
    mean : (r,) array
    precision : (r, r) SPD matrix
    n : number of samples
    rng : numpy Generator
    lower : (r,) array or None (defaults to the zero vector)

    Returns
    -------
    (n, r) array with every coordinate strictly above its bound.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    r = mean.size
    if r < 1:
        raise ShapeError("dimension must be >= 1")
    if r > DIM_LIMIT:
        raise DomainError(
            f"tilting sampler limited to dimension {DIM_LIMIT}, got {r}"
        )
    precision = np.atleast_2d(np.asarray(precision, dtype=float))
    if precision.shape != (r, r):
        raise ShapeError("precision shape does not match the mean")
    lower = np.zeros(r) if lower is None else np.asarray(lower, dtype=float).reshape(-1)
    if lower.size != r:
        raise ShapeError("lower bound length does not match the mean")

    chol_p, _ = jittered_cholesky(precision, what="truncation precision")
    cov = cho_solve((chol_p, True), np.eye(r))
    cov = 0.5 * (cov + cov.T)

    lb = lower - mean
    ub = np.full(r, np.inf)

    if r == 1:
        sd = math.sqrt(cov[0, 0])
        tl = np.full(n, lb[0] / sd)
        tu = np.full(n, np.inf)
        out = mean[0] + sd * trandn(rng, tl, tu)
        out = out.reshape(n, 1)
    else:
        big_l, perm, lb_p, ub_p = _colperm(cov, lb, ub)
        diag = np.diag(big_l)
        if np.any(diag < 1e-10):
            warnings.warn("truncation covariance is close to singular", RuntimeWarning)
        l_scaled = big_l / diag[:, None] - np.eye(r)
        lb_s = lb_p / diag
        ub_s = ub_p / diag

        sol = optimize.root(
            _grad_psi,
            np.zeros(2 * (r - 1)),
            args=(l_scaled, lb_s, ub_s),
            method="hybr",
            jac=True,
        )
        if not sol.success:
            warnings.warn(
                "tilting saddle-point solve did not fully converge", RuntimeWarning
            )
        x_opt = sol.x[: r - 1]
        mu_opt = sol.x[r - 1 :]
        psistar = _psy(x_opt, mu_opt, l_scaled, lb_s, ub_s)

        accepted = np.empty((r, 0))
        batch = max(n, 10_000)
        spent = 0
        while accepted.shape[1] < n:
            logpr, z = _mvn_proposals(rng, batch, mu_opt, l_scaled, lb_s, ub_s)
            keep = -np.log(rng.random(batch)) > psistar - logpr
            accepted = np.concatenate([accepted, z[:, keep]], axis=1)
            spent += batch
            if accepted.shape[1] == 0 and spent >= _MAX_FRUITLESS:
                raise FeasibilityError(
                    "acceptance probability underflowed; fall back to a Gibbs-style "
                    "or coordinate-wise truncated sampler for this geometry"
                )
        z = accepted[:, :n]
        out_perm = big_l @ z
        out = np.empty((r, n))
        out[perm, :] = out_perm
        out = (out + mean[:, None]).T

    # enforce the open orthant: nudge exact boundary hits by one ulp
    floor = np.nextafter(lower, np.inf)
    return np.maximum(out, floor[None, :])


def exponential_sample(rates, n, rng):
    """n inverse-CDF draws from the product exponential density, shape (n, d)."""
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if np.any(rates <= 0.0):
        raise DomainError("exponential rates must be > 0")
    u = rng.random((n, rates.size))
    out = -np.log1p(-u) / rates
    # inverse CDF can return exactly 0 when u == 0; keep draws strictly positive
    zero = out <= 0.0
    if np.any(zero):
        out[zero] = np.finfo(float).tiny / rates[np.nonzero(zero)[1]]
    return out
