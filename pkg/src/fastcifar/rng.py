"""Named, seedable random streams.

Every consumer of randomness asks for ``stream(seed, purpose, *counters)``.
Streams for different purposes (or different epochs) are statistically
independent, so switching one augmentation on or off never shifts the draws
seen by another.
"""
from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, purpose, *counters)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_key(purpose)]
    entropy.extend(int(c) for c in counters)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
