"""Seed derivation and random generator construction.

All randomness in the workbench flows through numpy ``Generator`` objects backed by PCG64.
Child seeds are derived with ``numpy.random.SeedSequence`` hashing of ``(master, *keys)``, which
is counter based: the seed for replication ``r`` never depends on how many other replications
ran before it, so any worker schedule reproduces the same draws.
"""
import numpy as np

_UINT64_MAX = 2**64 - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > _UINT64_MAX:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(master: int, *keys: int) -> int:
    """Mix a master seed with integer keys into a new 64-bit seed.

    Args:
        master: Master seed
        *keys: Stream identifiers (replication index, fold stream tag, ...)

    Returns:
        Derived 64-bit seed
    """
    entropy = [_check_seed(master), *(_check_seed(k) for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(seed: int) -> np.random.Generator:
    """Create a PCG64-backed generator from a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(_check_seed(seed)))
