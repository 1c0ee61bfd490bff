"""Seedable counter-based random stream.

Philox4x64-10 keyed directly by the integer seed (no seed hashing), counter
starting at zero.  A uniform double is ``(word >> 11) * 2**-53`` for each
raw 64-bit output word, consumed in order.  Any Philox4x64-10
implementation reproduces the stream bit for bit.
"""
import numpy as np


class PhiloxStream:
    def __init__(self, seed):
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self._bitgen = np.random.Philox(key=seed % 2**128, counter=0)

    def raw(self, n) -> np.ndarray:
        return np.asarray(self._bitgen.random_raw(int(n)), dtype=np.uint64).reshape(-1)

    def uniform(self, n) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n) -> np.ndarray:
        """Standard normals by Box-Muller on pairs of uniforms (cos branch only)."""
        u = self.uniform(2 * int(n)).reshape(-1, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
