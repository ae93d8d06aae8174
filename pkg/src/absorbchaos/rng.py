"""Counter-based random streams keyed by ``(seed, stream, step)``.

Each draw is a pure function of its key, so a particle's noise does not
depend on how many other particles exist, on the order in which they are
processed, or on the number of worker threads.  This is what lets the
reference system replay the exact Brownian increments when computing
change-of-measure weights.

The generator is numpy's Philox4x64 with key ``(seed, step)``; the counter
value ``c`` yields the four 64-bit words owned by stream ``c``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["CounterStreams", "derive_seed", "INITIAL_STEP"]

INITIAL_STEP = 2**64 - 1
_MASK64 = 2**64 - 1
_TWO_M53 = 2.0**-53


def _unit(words):
    # 53 high bits, shifted off the endpoints: values in (0, 1)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic 64-bit child seed for ``(seed, *labels)``."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *[int(v) for v in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class CounterStreams:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def words(self, step: int, streams) -> np.ndarray:
        """Four raw 64-bit words per stream, shape ``streams.shape + (4,)``."""
        streams = np.asarray(streams, dtype=np.int64)
        if streams.size == 0:
            return np.empty(streams.shape + (4,), dtype=np.uint64)
        if streams.min() < 0:
            raise ValueError("stream ids must be non-negative")
        lo = int(streams.min())
        hi = int(streams.max()) + 1
        key = np.array([self.seed, int(step) & _MASK64], dtype=np.uint64)
        bg = np.random.Philox(key=key, counter=[lo, 0, 0, 0])
        block = bg.random_raw(4 * (hi - lo)).reshape(hi - lo, 4)
        flat = streams.ravel()
        if flat.size == hi - lo and flat[0] == lo and np.all(np.diff(flat) == 1):
            return block.reshape(streams.shape + (4,))
        return block[streams - lo]

    def step_draws(self, step: int, streams):
        """Standard normal and an auxiliary uniform for every stream at ``step``."""
        w = self.words(step, streams)
        return ndtri(_unit(w[..., 0])), _unit(w[..., 1])

    def initial_uniforms(self, streams):
        return _unit(self.words(INITIAL_STEP, streams)[..., 0])
