"""
Named random sub-streams derived from one root seed
"""
import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """
    Return the generator for sub-stream `name` of root `seed`.

    The same (seed, name) pair always yields the same sequence, and streams
    with different names are statistically independent, so e.g. the noise
    stream can change without disturbing the parameter stream.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
