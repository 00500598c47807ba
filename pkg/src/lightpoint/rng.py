"""Seeded SplitMix64 generator.

The stream is fully specified so datasets and initializations can be
reproduced in any language:

    state_0 = seed mod 2**64
    state_i = state_{i-1} + 0x9E3779B97F4A7C15            (mod 2**64)
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9             (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB             (mod 2**64)
    out_i = z ^ (z >> 31)

Doubles in [0, 1) are ``(out >> 11) * 2**-53``. Normal variates use one
Box-Muller cosine branch per pair of doubles ``(u1, u2)``:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``. Because each output depends only on
its counter, draws are vectorized without changing the sequence.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MUL1 = np.uint64(0xBF58476D1CE4E5B9)
MUL2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MUL1
    z = (z ^ (z >> np.uint64(27))) * MUL2
    return z ^ (z >> np.uint64(31))


def derive_seed(*keys: int) -> int:
    """Hash a tuple of integers into a 64-bit seed."""
    acc = np.array([0x243F6A8885A308D3], dtype=np.uint64)
    for key in keys:
        acc = _mix(acc ^ np.array([int(key) & _MASK], dtype=np.uint64)) + GAMMA
    return int(_mix(acc)[0])


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        counters = np.arange(1, n + 1, dtype=np.uint64) * GAMMA + np.uint64(self.state)
        self.state = (self.state + n * int(GAMMA)) & _MASK
        return _mix(counters)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        if low == 0.0 and high == 1.0:
            return u
        return low + (high - low) * u

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        u = self.uniform(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return sigma * z

    def integers(self, n: int, high: int) -> np.ndarray:
        """Integers in ``[0, high)``."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
