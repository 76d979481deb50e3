"""Probabilistic model types and the closed-form Gaussian posterior mixture.

For a linear forward model with Gaussian noise and a Gaussian-mixture prior,
the posterior is again a Gaussian mixture: conditioned on the mixing variable
``w`` it is N(mu(w, y), Sigma(w)) with

    Sigma(w)^{-1} = A^T Sigma_obs^{-1} A + Sigma_pr(w)^{-1}
    mu(w, y)      = Sigma(w) (A^T Sigma_obs^{-1} y + Sigma_pr(w)^{-1} mu_pr(w)),

and the mixing variable has unnormalized posterior
pi(w|y) ∝ pi(y|w) pi(w) where the marginal likelihood term is available in
closed form up to one model-wide constant.  All densities here are handled in
log space; normalizing constants are never computed.
"""

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .errors import ArgError, DomainError, NumericalError, ShapeError, SupportError
from .linalg import CovarianceFactor, DiagonalFactor, as_covariance_factor, jittered_cholesky
from .operators import LinearMap, as_linear_map

__all__ = [
    "LinearGaussianModel",
    "GaussianComponentSpec",
    "MixingDensity",
    "ExponentialMixing",
    "InverseGammaMixing",
    "FiniteWeightMixing",
    "LaplacePrior",
    "PosteriorComponent",
    "posterior_component",
    "log_marginal_y_given_w",
    "log_mixing_posterior",
    "gmm_posterior_weights",
]

# Largest dimension for which posterior precisions are densified on demand.
DENSE_LIMIT = 4096


class LinearGaussianModel:
    """Forward matrix, noise covariance and observed data of y = A x + e.

    Parameters
    ----------
    forward : array_like, scipy.sparse matrix or LinearMap, shape (m, d)
    noise_cov : scalar variance, (m,) diagonal, (m, m) matrix or CovarianceFactor
    data : array_like, shape (m,)
    """

    def __init__(self, forward, noise_cov, data):
        self.forward = as_linear_map(forward)
        m, d = self.forward.shape
        if m < 1 or d < 1:
            raise ShapeError("forward map must have m >= 1 and d >= 1")
        self.m, self.d = m, d
        self.data = np.asarray(data, dtype=float).reshape(-1)
        if self.data.size != m:
            raise ShapeError(f"data has length {self.data.size}, expected {m}")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("data contains non-finite entries")
        self.noise = as_covariance_factor(noise_cov, dim=m, what="noise covariance")
        if self.noise.dim != m:
            raise ShapeError("noise covariance dimension does not match data")
        self._check_forward_finite()
        self._whitened = None
        self._whitened_data = None

    def _check_forward_finite(self):
        if self.forward.is_explicit:
            mat = self.forward.mat
            data = mat.data if sparse.issparse(mat) else mat
            if not np.all(np.isfinite(data)):
                raise DomainError("forward matrix contains non-finite entries")
        else:
            probe = self.forward.matvec(np.ones(self.d))
            if not np.all(np.isfinite(probe)):
                raise DomainError("forward map produced non-finite values")

    def whitened_forward(self):
        """Materialize L1^T A with Sigma_obs^{-1} = L1 L1^T (dense or sparse)."""
        if self._whitened is None:
            if self.forward.is_explicit:
                mat = self.forward.mat
                if sparse.issparse(mat):
                    if isinstance(self.noise, DiagonalFactor):
                        scale = sparse.diags(self.noise._isqrt)
                        self._whitened = (scale @ mat).tocsr()
                    else:
                        self._whitened = np.apply_along_axis(
                            self.noise.prec_sqrt_matvec, 0, mat.toarray()
                        )
                else:
                    if isinstance(self.noise, DiagonalFactor):
                        self._whitened = self.noise._isqrt[:, None] * mat
                    else:
                        # L^{-1} applied column-wise
                        self._whitened = self.noise.prec_sqrt_matvec(mat)
            else:
                dense = self.forward.to_array()
                if isinstance(self.noise, DiagonalFactor):
                    self._whitened = self.noise._isqrt[:, None] * dense
                else:
                    self._whitened = self.noise.prec_sqrt_matvec(dense)
        return self._whitened

    def whitened_data(self):
        """L1^T y."""
        if self._whitened_data is None:
            self._whitened_data = self.noise.prec_sqrt_matvec(self.data)
        return self._whitened_data

    def data_misfit_rhs(self):
        """A^T Sigma_obs^{-1} y."""
        return self.forward.rmatvec(self.noise.solve(self.data))


class GaussianComponentSpec:
    """Component mean and covariance of a Gaussian prior mixture.

    ``mean_fn(w)`` returns the component mean vector and ``cov_fn(w)`` the
    component covariance (vector for diagonal, matrix, or CovarianceFactor).
    """

    def __init__(self, dim, mean_fn, cov_fn):
        self.dim = int(dim)
        self.mean_fn = mean_fn
        self.cov_fn = cov_fn

    @classmethod
    def scale_mixture(cls, dim):
        """Zero-mean mixture with diagonal covariance diag(w)."""
        return cls(dim, lambda w: np.zeros(dim), lambda w: np.asarray(w, dtype=float))

    def component(self, w):
        """Return (mu_pr(w), Sigma_pr(w) factor); raises DomainError if not SPD."""
        mean = np.asarray(self.mean_fn(w), dtype=float).reshape(-1)
        if mean.size != self.dim:
            raise ShapeError(
                f"component mean has length {mean.size}, expected {self.dim}"
            )
        cov = self.cov_fn(w)
        factor = as_covariance_factor(cov, dim=self.dim, what="component covariance")
        if factor.dim != self.dim:
            raise ShapeError("component covariance dimension mismatch")
        return mean, factor


class MixingDensity:
    """Prior density over the mixing variable."""

    def log_density(self, w):
        raise NotImplementedError

    def in_support(self, w):
        raise NotImplementedError

    def sample(self, n, rng):
        raise NotImplementedError


class ExponentialMixing(MixingDensity):
    """Product-form exponential density on R^d_{>0}: pi(w) ∝ exp(-lambda^T w)."""

    def __init__(self, rates):
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if np.any(rates <= 0.0) or not np.all(np.isfinite(rates)):
            raise DomainError("exponential mixing rates must be finite and > 0")
        self.rates = rates
        self.dim = rates.size

    def in_support(self, w):
        w = np.asarray(w, dtype=float)
        return w.shape == (self.dim,) and bool(np.all(w >= 0.0))

    def log_density(self, w):
        w = np.asarray(w, dtype=float)
        if not self.in_support(w):
            raise SupportError("w outside the positive orthant")
        return float(np.sum(np.log(self.rates)) - self.rates @ w)

    def sample(self, n, rng):
        u = rng.random((n, self.dim))
        return -np.log1p(-u) / self.rates


class InverseGammaMixing(MixingDensity):
    """Per-coordinate inverse-gamma density (Student's-t mixing)."""

    def __init__(self, shape, rate, dim):
        if shape <= 0.0 or rate <= 0.0:
            raise DomainError("inverse-gamma shape and rate must be > 0")
        self.shape = float(shape)
        self.rate = float(rate)
        self.dim = int(dim)

    def in_support(self, w):
        w = np.asarray(w, dtype=float)
        return w.shape == (self.dim,) and bool(np.all(w > 0.0))

    def log_density(self, w):
        w = np.asarray(w, dtype=float)
        if not self.in_support(w):
            raise SupportError("w outside the open positive orthant")
        a, b = self.shape, self.rate
        per_coord = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(w) - b / w
        return float(np.sum(per_coord))

    def sample(self, n, rng):
        g = rng.gamma(self.shape, 1.0 / self.rate, size=(n, self.dim))
        return 1.0 / g


class FiniteWeightMixing(MixingDensity):
    """Dirac-mass mixture over component indices 0..N-1 (GMM)."""

    def __init__(self, weights):
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if weights.size < 1 or np.any(weights < 0.0):
            raise DomainError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1 within 1e-12")
        self.weights = weights
        self.n_components = weights.size

    def in_support(self, w):
        return isinstance(w, (int, np.integer)) and 0 <= int(w) < self.n_components

    def log_density(self, w):
        if not self.in_support(w):
            raise SupportError("component index outside {0,...,N-1}")
        p = self.weights[int(w)]
        return float(np.log(p)) if p > 0.0 else -np.inf

    def sample(self, n, rng):
        return rng.choice(self.n_components, size=n, p=self.weights)


class LaplacePrior:
    """Product-form Laplace prior with per-coordinate rates delta > 0."""

    def __init__(self, rates):
        rates = np.atleast_1d(np.asarray(rates, dtype=float))
        if np.any(rates <= 0.0) or not np.all(np.isfinite(rates)):
            raise DomainError("Laplace rates must be finite and > 0")
        self.rates = rates
        self.dim = rates.size

    def mixing_rates(self):
        """Exponential mixing rates lambda_i = delta_i^2 / 2."""
        return self.rates**2 / 2.0

    def mixing(self):
        return ExponentialMixing(self.mixing_rates())

    def component_spec(self):
        return GaussianComponentSpec.scale_mixture(self.dim)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(np.log(self.rates / 2.0)) - self.rates @ np.abs(x))

    def sample(self, n, rng):
        """Inverse-CDF Laplace draws, shape (n, d)."""
        u = rng.random((n, self.dim)) - 0.5
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u)) / self.rates


class PosteriorComponent:
    """The conditional Gaussian N(mu(w, y), Sigma(w)) in factored form.

    The precision Sigma(w)^{-1} is held as the pair (model, prior factor) and
    applied matrix-free; it is densified only on demand for small problems.
    """

    def __init__(self, model, prior_mean, prior_factor):
        self.model = model
        self.prior_mean = np.asarray(prior_mean, dtype=float).reshape(-1)
        self.prior_factor = prior_factor
        if self.prior_mean.size != model.d or prior_factor.dim != model.d:
            raise ShapeError("prior component dimension does not match the model")
        self._mean = None

    def precision_matvec(self, x):
        fwd = self.model.forward
        return fwd.rmatvec(self.model.noise.solve(fwd.matvec(x))) + self.prior_factor.solve(x)

    def rhs(self):
        """A^T Sigma_obs^{-1} y + Sigma_pr^{-1} mu_pr."""
        return self.model.data_misfit_rhs() + self.prior_factor.solve(self.prior_mean)

    def dense_precision(self):
        d = self.model.d
        if d > DENSE_LIMIT:
            raise NumericalError(
                f"refusing to densify a {d}x{d} precision (limit {DENSE_LIMIT})"
            )
        ta = self.model.whitened_forward()
        if sparse.issparse(ta):
            gram = (ta.T @ ta).toarray()
        else:
            gram = ta.T @ ta
        prior_prec = np.apply_along_axis(self.prior_factor.solve, 0, np.eye(d))
        return gram + prior_prec

    def mean(self):
        """Unique solution of Sigma(w)^{-1} mu = rhs."""
        if self._mean is None:
            prec = self.dense_precision()
            chol, _ = jittered_cholesky(prec, what="posterior precision")
            b = self.rhs()
            from scipy.linalg import solve_triangular

            y = solve_triangular(chol, b, lower=True)
            self._mean = solve_triangular(chol.T, y, lower=False)
        return self._mean

    def covariance(self):
        """Dense Sigma(w); intended for small-dimension oracles and tests."""
        prec = self.dense_precision()
        chol, _ = jittered_cholesky(prec, what="posterior precision")
        from scipy.linalg import solve_triangular

        inv_l = solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
        return inv_l.T @ inv_l

    def logdet_precision(self):
        prec = self.dense_precision()
        chol, _ = jittered_cholesky(prec, what="posterior precision")
        return float(2.0 * np.sum(np.log(np.diag(chol))))


def posterior_component(model, spec, w):
    """Build the Gaussian posterior component for mixing variable ``w``.

    Returns a PosteriorComponent whose mean solves
    Sigma(w)^{-1} mu = A^T Sigma_obs^{-1} y + Sigma_pr(w)^{-1} mu_pr(w).
    """
    mean, factor = spec.component(w)
    if factor.dim != model.d:
        raise ShapeError("component covariance does not match model dimension")
    return PosteriorComponent(model, mean, factor)


def log_marginal_y_given_w(model, spec, w):
    """log pi(y|w) up to one additive constant fixed per model instance.

    Computed as  1/2 log det Sigma(w) - 1/2 log det Sigma_pr(w)
               + 1/2 ||mu(w,y)||^2_{Sigma(w)^{-1}} - 1/2 ||mu_pr||^2_{Sigma_pr^{-1}},
    with determinants as factorization log-determinants (never ratios).
    """
    comp = posterior_component(model, spec, w)
    mu = comp.mean()
    b = comp.rhs()
    # mu^T Sigma^{-1} mu = mu^T b since Sigma^{-1} mu = b
    quad_post = float(mu @ b)
    quad_prior = comp.prior_factor.quad_prec(comp.prior_mean)
    logdet_post = -comp.logdet_precision()  # log det Sigma(w)
    logdet_prior = comp.prior_factor.logdet()
    value = 0.5 * (logdet_post - logdet_prior) + 0.5 * (quad_post - quad_prior)
    if not np.isfinite(value):
        raise NumericalError("log marginal likelihood is not finite")
    return value


def log_mixing_posterior(model, spec, mixing, w):
    """Unnormalized log posterior mixing density log pi(y|w) + log pi(w)."""
    if not mixing.in_support(w):
        raise SupportError("w outside the mixing density support")
    return log_marginal_y_given_w(model, spec, w) + mixing.log_density(w)


def gmm_posterior_weights(model, means, covs, weights):
    """Posterior component weights p(i|y) ∝ pi(y|i) p_i for a finite GMM.

    Uses log-sum-exp normalization; component likelihoods come from the same
    closed-form marginal as the continuous case.
    """
    if len(means) != len(covs) or len(means) != len(weights):
        raise ArgError("means, covs and weights must have equal length")
    n = len(means)
    if n < 1:
        raise ArgError("need at least one component")
    mixing = FiniteWeightMixing(weights)
    spec = GaussianComponentSpec(
        model.d,
        lambda i: means[int(i)],
        lambda i: covs[int(i)],
    )
    log_post = np.empty(n)
    for i in range(n):
        log_lik = log_marginal_y_given_w(model, spec, i)
        log_post[i] = log_lik + mixing.log_density(i)
    if not np.all(np.isfinite(log_post[np.asarray(weights) > 0])):
        raise NumericalError("non-finite component log posterior; check inputs")
    shifted = log_post - np.max(log_post)
    out = np.exp(shifted)
    total = out.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise NumericalError("posterior weights underflowed despite log-sum-exp")
    return out / total
