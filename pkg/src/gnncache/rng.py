"""Keyed counter-based pseudo-random hashing.

Every random decision in the sampling pipeline is a pure function of a
64-bit key (derived from seed, epoch, clique, GPU, batch, hop) and an
explicit counter, so results never depend on execution order or thread
schedule. The mixer is the splitmix64 finalizer.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# local-shuffle and batch-sampling sub-streams of a per-GPU stream
ROLE_SHUFFLE = 1
ROLE_SAMPLE = 2


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int (wraps at 64 bits)."""
    x &= _MASK
    x ^= x >> 30
    x = (x * _MIX_A) & _MASK
    x ^= x >> 27
    x = (x * _MIX_B) & _MASK
    x ^= x >> 31
    return x


def mix64_array(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (vectorized, wrapping)."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX_A)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX_B)
    x ^= x >> np.uint64(31)
    return x


class KeyedRng:
    """Hierarchically keyed deterministic random stream.

    `derive(*components)` folds integer path components into a child key;
    the hash methods map explicit counters under that key to pseudo-random
    words. Identical (key, counter) pairs always produce identical output.
    """

    __slots__ = ("key",)

    def __init__(self, key: int):
        self.key = int(key) & _MASK

    def derive(self, *components: int) -> "KeyedRng":
        k = self.key
        for c in components:
            k = mix64(k ^ mix64((int(c) + _GOLDEN) & _MASK))
        return KeyedRng(k)

    def hash_counters(self, counters: np.ndarray) -> np.ndarray:
        c = np.asarray(counters).astype(np.uint64)
        return mix64_array((c + np.uint64(_GOLDEN)) ^ np.uint64(self.key))

    def hash_pairs(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Hash two parallel counter arrays (e.g. position and draw index)."""
        ha = self.hash_counters(a)
        hb = np.asarray(b).astype(np.uint64) + np.uint64(_GOLDEN)
        return mix64_array(hb ^ ha)

    def uniform(self, counters: np.ndarray) -> np.ndarray:
        """Map counters to float64 values in [0, 1)."""
        return (self.hash_counters(counters) >> np.uint64(11)) * (2.0 ** -53)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (sort by hashed keys)."""
        if n == 0:
            return np.empty(0, dtype=np.int64)
        return np.argsort(self.hash_counters(np.arange(n, dtype=np.int64)), kind="stable")

    def shuffled(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.permutation(len(values))]


def derive_seed(master: int, *components: int) -> int:
    """Fan a master seed out to an independent 64-bit module seed."""
    return KeyedRng(master).derive(*components).key
