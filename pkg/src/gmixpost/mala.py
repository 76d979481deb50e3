"""Metropolis-adjusted Langevin sampler with dual-averaging step adaptation.

The proposal is x' = x + (tau^2/2) grad log pi(x) + tau xi with xi ~ N(0, I),
corrected by the exact asymmetric Metropolis-Hastings ratio.  The step size
is adapted during burn-in only (dual averaging towards a target acceptance
rate) and frozen afterwards, so the post-burn-in chain satisfies detailed
balance.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .chains import ChainSet
from .errors import ArgError, DivergenceError, InitError, SupportError

__all__ = ["TargetDensity", "MalaConfig", "mala_sample"]

# consecutive non-finite proposals tolerated before declaring divergence
_MAX_BAD_PROPOSALS = 1000

# dual-averaging constants (shrinkage target, stabilizer, decay exponent)
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass
class TargetDensity:
    """Log density and gradient of a sampling target on R^n.

    ``value_and_grad`` may be supplied when one factorization serves both;
    otherwise it falls back to separate calls.
    """

    dim: int
    log_density: callable
    grad_log_density: callable
    value_and_grad: callable = None

    def __post_init__(self):
        if self.value_and_grad is None:
            self.value_and_grad = lambda x: (
                self.log_density(x),
                self.grad_log_density(x),
            )


@dataclass
class MalaConfig:
    n_samples: int
    n_chains: int = 1
    seed: int = 0
    burn_in: int = None  # default: 20% of n_samples
    initial_step: float = None  # default: 0.5 * dim^{-1/6}
    target_accept: float = 0.574
    n_workers: int = 1
    stream_label: str = "mala"
    extra_path: tuple = field(default_factory=tuple)

    def resolved_burn_in(self):
        return int(round(0.2 * self.n_samples)) if self.burn_in is None else int(self.burn_in)


def _run_chain(target, config, chain_index, initial):
    gen = rngmod.stream(config.seed, *config.extra_path, config.stream_label, chain_index)
    n = target.dim
    burn = config.resolved_burn_in()
    total = burn + config.n_samples
    step0 = config.initial_step
    if step0 is None:
        step0 = 0.5 * n ** (-1.0 / 6.0)

    x = np.array(initial, dtype=float).reshape(-1)
    if x.size != n:
        raise ArgError(f"initial point has length {x.size}, expected {n}")
    try:
        value, grad = target.value_and_grad(x)
    except SupportError as exc:
        raise InitError(f"target not evaluable at the initial point: {exc}") from exc
    if not np.isfinite(value):
        raise InitError("log density is not finite at the initial point")

    log_step = math.log(step0)
    log_step_avg = math.log(step0)
    h_bar = 0.0
    mu = math.log(10.0 * step0)

    samples = np.empty((n, config.n_samples))
    step_trace = np.empty(total)
    accepted_post = 0
    bad_streak = 0

    for t in range(total):
        tau = math.exp(log_step if t < burn else log_step_avg)
        step_trace[t] = tau
        xi = gen.standard_normal(n)
        log_u = math.log(gen.random())

        prop = x + 0.5 * tau * tau * grad + tau * xi
        try:
            prop_value, prop_grad = target.value_and_grad(prop)
        except SupportError:
            prop_value, prop_grad = -np.inf, None

        if np.isfinite(prop_value):
            bad_streak = 0
            # forward kernel density: proposal displacement is tau*xi
            log_q_fwd = -0.5 * float(xi @ xi)
            back = x - prop - 0.5 * tau * tau * prop_grad
            log_q_rev = -0.5 * float(back @ back) / (tau * tau)
            log_alpha = prop_value - value + log_q_rev - log_q_fwd
            alpha = min(1.0, math.exp(min(0.0, log_alpha)))
            if log_u < log_alpha:
                x, value, grad = prop, prop_value, prop_grad
                if t >= burn:
                    accepted_post += 1
        else:
            bad_streak += 1
            alpha = 0.0
            if bad_streak > _MAX_BAD_PROPOSALS:
                raise DivergenceError(
                    f"chain {chain_index}: {bad_streak} consecutive non-finite proposals"
                )

        if t < burn:
            tt = t + 1.0
            h_bar = (1.0 - 1.0 / (tt + _DA_T0)) * h_bar + (
                config.target_accept - alpha
            ) / (tt + _DA_T0)
            log_step = mu - math.sqrt(tt) / _DA_GAMMA * h_bar
            eta = tt ** (-_DA_KAPPA)
            log_step_avg = eta * log_step + (1.0 - eta) * log_step_avg
        else:
            samples[:, t - burn] = x

    accept_rate = accepted_post / max(1, config.n_samples)
    return samples.T, accept_rate, step_trace


def mala_sample(target, config, initial=None):
    """Run MALA chains against ``target`` and return a ChainSet.

    Parameters
    ----------
    target : TargetDensity
    config : MalaConfig
    initial : array_like, callable or None
        Start point shared by all chains, a callable ``chain_index -> x0``,
        or None for the origin.
    """
    if config.n_samples < 1 or config.n_chains < 1:
        raise ArgError("need n_samples >= 1 and n_chains >= 1")

    def start_point(c):
        if initial is None:
            return np.zeros(target.dim)
        if callable(initial):
            return np.asarray(initial(c), dtype=float)
        return np.asarray(initial, dtype=float)

    indices = list(range(config.n_chains))
    if config.n_workers > 1:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(
                pool.map(lambda c: _run_chain(target, config, c, start_point(c)), indices)
            )
    else:
        results = [_run_chain(target, config, c, start_point(c)) for c in indices]

    samples = np.stack([res[0] for res in results])
    acceptance = [res[1] for res in results]
    traces = [res[2] for res in results]
    return ChainSet(samples, seeds=indices, acceptance=acceptance, step_traces=traces)
