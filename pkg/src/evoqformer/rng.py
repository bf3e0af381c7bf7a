"""Seeded generators.

All randomness goes through numpy's Philox4x64-10 counter-based bit
generator keyed directly by the integer seed, so streams are fixed by
algorithm rather than by host defaults. Independent substreams come from
``jumped``.
"""

import numpy as np

PRNG_ALGORITHM = "philox4x64-10"


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    bitgen = np.random.Philox(key=int(seed) % (1 << 128))
    if stream:
        bitgen = bitgen.jumped(stream)
    return np.random.Generator(bitgen)
