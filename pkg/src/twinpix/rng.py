"""Counter-based random streams.

Every stochastic stage draws from its own Philox stream keyed by
(global seed, stage tag) with the frame (or resample) index as counter.
Frame i therefore gets identical random numbers no matter in which order,
on which worker, or alongside which other frames it is generated.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stage tags keep streams for different purposes disjoint even when they
# share the global seed and index.
SOURCE_STREAM = 0x736F7572
DETECTOR_STREAM = 0x64657463
BOOTSTRAP_STREAM = 0x626F6F74


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Return the deterministic generator for (seed, tag, index).

    Parameters
    ----------
    seed : int
        Global run seed (used modulo 2**64).
    tag : int
        Stage tag, one of the ``*_STREAM`` constants (or any fixed integer).
    index : int
        Frame index, resample index, or 0 for per-run streams.
    """
    key = np.array([seed & _MASK64, tag & _MASK64], dtype=np.uint64)
    # The index sits in the second counter word: Philox increments the first
    # word as values are drawn, so streams stay 2**64 blocks apart no matter
    # how much a frame consumes.
    counter = np.array([0, index & _MASK64, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
