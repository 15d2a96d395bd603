"""
Counter-based seed derivation

All randomness of a run flows from one root seed. A subsystem seed is the
first 32-bit word of SeedSequence([root, stream, counter]); the counter is
the update step, epoch, image index or trial chunk, depending on the stream.
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    INIT_GENERATIVE = 1
    INIT_RECOGNITION = 2
    BASELINE = 3
    SHUFFLE = 4
    NOISE = 5
    EVALUATION = 6
    DATA = 7
    PROFILE = 8
    VERIFY = 9
    BINARIZE = 10


def derive_seed(root: int, stream: Stream, counter: int = 0) -> int:
    sequence = np.random.SeedSequence([int(root) & 0xFFFFFFFF, int(stream), int(counter)])
    return int(sequence.generate_state(1)[0])


def derive_rng(root: int, stream: Stream, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, stream, counter))
