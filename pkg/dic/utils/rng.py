import zlib

import numpy as np


def _stream_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, purpose, index) triple.

    Streams are independent of each other and of the order in which they are
    requested, so data generation and training steps can be scheduled freely.
    """
    seq = np.random.SeedSequence([int(seed), _stream_id(purpose), int(index)])
    return np.random.Generator(np.random.Philox(seq))
