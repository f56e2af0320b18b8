"""Keyed random streams.

Every consumer of randomness asks for a stream by ``(seed, label)`` so that the
draws it receives do not depend on execution order or on which other streams
were requested before it.
"""
import zlib

import numpy as np


def stream(seed: int, label: str) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
