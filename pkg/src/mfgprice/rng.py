"""Seeded random streams.

Every stream is a Philox counter-based generator whose 128-bit key packs a
domain tag in the high 64 bits and ``seed ^ index`` in the low 64 bits.
Path ``i`` of an ensemble therefore always sees the same numbers no matter
how many paths are drawn, in which order, or on which thread.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

NOISE = 0
AGENTS = 1
BRIDGE = 2


def stream_key(seed, index=0, domain=NOISE):
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return (domain << 64) | ((int(seed) ^ int(index)) & _MASK64)


def generator(seed, index=0, domain=NOISE):
    return np.random.Generator(np.random.Philox(key=stream_key(seed, index, domain)))
