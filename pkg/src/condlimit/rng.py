"""Counter-based random streams.

Every stochastic routine in this package draws from a Philox counter-based
generator keyed by ``(seed, stream)``. Streams are statistically independent
and reproducible regardless of scheduling, so parallel replications can be
assigned stream ids up front and results never depend on the worker count.
"""

from __future__ import annotations

import numpy as np


def stream_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the given (seed, stream) pair."""
    if not (0 <= seed < 2**64):
        raise ValueError(f"seed {seed} outside u64 range")
    if not (0 <= stream < 2**64):
        raise ValueError(f"stream {stream} outside u64 range")
    return np.random.Generator(np.random.Philox(key=(seed, stream)))
