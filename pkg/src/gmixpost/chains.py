"""Multi-chain sample storage."""

import numpy as np

from .errors import ArgError

__all__ = ["ChainSet"]


class ChainSet:
    """C chains of N samples in R^n with per-chain seeds and sampler stats.

    Parameters
    ----------
    samples : ndarray, shape (C, N, n)
    seeds : sequence of int, length C
        Stream identifiers; must be distinct.
    acceptance : sequence of float, optional
    step_traces : sequence of ndarray, optional
        Per-chain step-size traces (empty for non-MCMC sample sets).
    """

    def __init__(self, samples, seeds, acceptance=None, step_traces=None):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 3:
            raise ArgError("samples must have shape (n_chains, n_samples, dim)")
        self.samples = samples
        self.seeds = [int(s) for s in seeds]
        if len(self.seeds) != samples.shape[0]:
            raise ArgError("one seed per chain required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ArgError("chain seeds must be distinct")
        self.acceptance = (
            [float(a) for a in acceptance]
            if acceptance is not None
            else [float("nan")] * samples.shape[0]
        )
        self.step_traces = (
            [np.asarray(t, dtype=float) for t in step_traces]
            if step_traces is not None
            else [np.empty(0)] * samples.shape[0]
        )

    @property
    def n_chains(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def dim(self):
        return self.samples.shape[2]

    def pooled(self):
        """All chains stacked into one (C*N, n) array."""
        return self.samples.reshape(-1, self.dim)

    def coordinate(self, i):
        """Per-chain series of coordinate i, shape (C, N)."""
        return self.samples[:, :, i]

    def restrict(self, idx):
        """New ChainSet holding only the given coordinates."""
        return ChainSet(
            self.samples[:, :, np.asarray(idx, dtype=int)],
            self.seeds,
            self.acceptance,
            self.step_traces,
        )
