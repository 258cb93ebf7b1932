import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def make_rng(seed, *stream) -> np.random.Generator:
    """Philox stream keyed by ``(seed, *stream)``; strings are hashed to integers."""
    if isinstance(seed, np.random.Generator):
        return seed
    key = [_word(seed)] + [_word(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
