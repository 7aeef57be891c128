import numpy as np

GENERATOR_NAME = "numpy.random.PCG64"


def derive_seed(*keys: int) -> int:
    """Hash a sequence of non-negative integers into a single 63-bit seed."""
    state = np.random.SeedSequence(list(keys)).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent PCG64 stream for the given key path, e.g. (master_seed, round, client_id)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))
