"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, channel)`` whose
counter starts at a caller-chosen index (a step or a cell number), so any
draw can be regenerated without replaying the ones before it.
"""
import numpy as np

POSITION = 1
ANGLE = 2
NOISE = 3
RELAX_NOISE = 4


def stream(seed: int, channel: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be non-negative")
    key = np.array([seed, channel], dtype=np.uint64)
    counter = np.array([0, index, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
