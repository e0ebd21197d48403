"""Deterministic seed derivation shared by dataset generation and training.

All per-frame / per-stream seeds are derived from a master seed with a
splitmix64 chain so that results never depend on how work is ordered or
parallelized.
"""

import numpy as np

_MASK = (1 << 64) - 1

# stream tags (arbitrary fixed constants, one per RNG purpose)
TAG_FRAME = 0x66726D65  # per-frame generation
TAG_DATA = 0x64617461  # dataset master seeds
TAG_TEST = 0x74657374  # held-out dataset
TAG_INIT = 0x696E6974  # model initialization
TAG_BATCH = 0x62617463  # per-client batch sampling
TAG_CHANNEL = 0x6368616E  # airlink draws during training
TAG_EVAL = 0x6576616C  # airlink draws during evaluation
TAG_SHARD = 0x73686172  # client partitioning
TAG_COMPARE = 0x636D7072  # per-cell seeds of a comparison grid


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one 64-bit seed (order-sensitive, stable)."""
    state = 0x5AFE5EED5AFE5EED
    for p in parts:
        state = _splitmix64((state ^ (int(p) & _MASK)) & _MASK)
    return state


def rng_from(*parts: int) -> np.random.Generator:
    """Fresh PCG64 generator for the stream identified by `parts`."""
    return np.random.default_rng(derive_seed(*parts))
