"""Chain diagnostics: effective sample size, EPSR and credible intervals."""

import warnings

import numpy as np

from .errors import ArgError

__all__ = [
    "ess",
    "ess_multichain",
    "ness",
    "ness_per_coordinate",
    "epsr",
    "credible_interval",
]


def _autocovariance(x):
    """Biased autocovariance sequence via FFT, length N."""
    n = x.size
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def _geyer_tau(rho):
    """Integrated autocorrelation time from the initial positive sequence."""
    n = rho.size
    n_pairs = n // 2
    tau = -1.0
    for k in range(n_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return max(tau, 1e-8)


def ess(chain):
    """Effective sample size of a single scalar chain.

    Uses Geyer's initial positive sequence on the empirical autocorrelations.
    A zero-variance chain counts as fully degenerate: returns N and warns.
    """
    x = np.asarray(chain, dtype=float).reshape(-1)
    n = x.size
    if n < 10:
        raise ArgError("need at least 10 samples for an ESS estimate")
    acov = _autocovariance(x)
    if acov[0] <= 0.0:
        warnings.warn("zero-variance chain; ESS is reported as N", RuntimeWarning)
        return float(n)
    rho = acov / acov[0]
    return float(n / _geyer_tau(rho))


def ess_multichain(series):
    """ESS of C chains of one coordinate, shape (C, N).

    Autocovariances are averaged across chains before truncation; the result
    counts all C*N draws.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    c, n = series.shape
    if n < 10:
        raise ArgError("need at least 10 samples per chain")
    acov = np.mean([_autocovariance(series[i]) for i in range(c)], axis=0)
    if acov[0] <= 0.0:
        warnings.warn("zero-variance chains; ESS is reported as C*N", RuntimeWarning)
        return float(c * n)
    rho = acov / acov[0]
    return float(c * n / _geyer_tau(rho))


def ness(chain):
    """Normalized ESS of a single scalar chain (ESS / N)."""
    x = np.asarray(chain, dtype=float).reshape(-1)
    return ess(x) / x.size


def ness_per_coordinate(samples):
    """Mean-free nESS per coordinate of a (C, N, n) multi-chain array."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None, :, :]
    c, n, dim = samples.shape
    out = np.empty(dim)
    for i in range(dim):
        out[i] = ess_multichain(samples[:, :, i]) / (c * n)
    return out


def epsr(samples):
    """Split-chain estimated potential scale reduction per coordinate.

    Parameters
    ----------
    samples : ndarray, shape (C, N, n) with C >= 2 (or >= 1; chains are split
        in half, so 2C sequences enter the estimate).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3:
        raise ArgError("expected samples of shape (n_chains, n_samples, dim)")
    c, n, dim = samples.shape
    if c < 2 and n < 4:
        raise ArgError("need at least two chains or enough samples to split")
    half = n // 2
    split = np.concatenate([samples[:, :half, :], samples[:, half : 2 * half, :]], axis=0)
    m, length = split.shape[0], split.shape[1]
    means = split.mean(axis=1)  # (2C, n)
    variances = split.var(axis=1, ddof=1)  # (2C, n)
    w = variances.mean(axis=0)
    b = length * means.var(axis=0, ddof=1)
    out = np.ones(dim)
    ok = w > 0.0
    var_plus = (length - 1.0) / length * w[ok] + b[ok] / length
    out[ok] = np.sqrt(var_plus / w[ok])
    return out


def credible_interval(samples, level):
    """Empirical central credible interval per coordinate.

    Parameters
    ----------
    samples : (N, n) or (C, N, n) array (chains are pooled)
    level : float in (0, 1), e.g. 0.9

    Returns
    -------
    (lo, hi) arrays of length n at quantiles (1-level)/2 and 1-(1-level)/2.
    """
    if not 0.0 < level < 1.0:
        raise ArgError("level must lie in (0, 1)")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 3:
        samples = samples.reshape(-1, samples.shape[2])
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(samples, alpha, axis=0)
    hi = np.quantile(samples, 1.0 - alpha, axis=0)
    return lo, hi
