"""Reproducible random-number streams.

Every stochastic routine in the library draws from a stream derived from a
root seed and a path of labels.  Streams with different paths are
statistically independent, and the derivation is stable across processes and
platforms, so a run is fully determined by its root seed.
"""

import zlib

import numpy as np

__all__ = ["stream", "spawn_key"]


def spawn_key(*path):
    """Map a label path (strings and/or ints) to a stable integer tuple."""
    key = []
    for part in path:
        if isinstance(part, (int, np.integer)):
            if part < 0:
                raise ValueError("stream path integers must be non-negative")
            key.append(int(part))
        else:
            # crc32 is stable across platforms and Python versions
            key.append(zlib.crc32(str(part).encode("utf-8")))
    return tuple(key)


def stream(root_seed, *path):
    """Return a Generator for the stream identified by (root_seed, path).

    Parameters
    ----------
    root_seed : int
        Root seed of the run.
    *path : str or int
        Labels identifying the purpose, e.g. ``stream(seed, "mala", chain)``.
    """
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=spawn_key(*path))
    return np.random.Generator(np.random.Philox(seq))
