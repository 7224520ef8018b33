import zlib

import numpy as np


def derive_seed(global_seed: int, stage: str, index: int = 0) -> int:
    """Derives an independent, reproducible 32-bit seed for one task of one pipeline stage."""
    sequence = np.random.SeedSequence([global_seed, zlib.crc32(stage.encode()), index])
    return int(sequence.generate_state(1)[0])


def rng_for(global_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, stage, index))
