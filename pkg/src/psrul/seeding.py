"""Deterministic stream derivation on top of a counter-based generator.

All randomness in the package flows through Philox generators keyed by a
64-bit base seed mixed with integer salts.  The same (seed, salts) pair
yields the same stream on every platform, and distinct salt chains give
independent streams, so components (weight init, batch sampling, scarcity
per subject, ...) never perturb each other's draws.
"""

from __future__ import annotations

import numpy as np

# Pinned in provenance output: changing the generator breaks reproducibility.
RNG_ALGORITHM = "philox4x64"

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 finalization round (portable 64-bit mixing)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def derive_key(seed: int, *salts: int) -> int:
    """Mix a base seed with integer salts into an independent stream key."""
    key = splitmix64(seed & _MASK64)
    for salt in salts:
        key = splitmix64(key ^ (salt & _MASK64))
    return key


def generator(seed: int, *salts: int) -> np.random.Generator:
    """Philox generator keyed by ``derive_key(seed, *salts)``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *salts)))
