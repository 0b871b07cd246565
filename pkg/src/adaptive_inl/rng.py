"""Deterministic random streams.

Every stochastic operation in the package takes an explicit
``numpy.random.Generator``.  Streams are derived from a root seed plus a
tuple of integer keys, so that e.g. device 17 of a Monte Carlo run always
sees the same numbers regardless of how many other devices exist or in
which order they are processed.
"""

from __future__ import annotations

import numpy as np

# Sub-stream tags.  Kept as integers so they can live in a spawn key.
MISMATCH = 1
NOISE = 2
HISTOGRAM = 3


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``(seed, *keys)``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))
