"""SplitMix64-based deterministic generator.

The i-th output of a stream is ``mix(seed + (i + 1) * GAMMA)``, so whole
blocks are computed vectorised with wrap-around uint64 arithmetic and the
result never depends on numpy's own bit generators.
"""

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int = 0):
        self.state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def next_u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * GAMMA
            out = _mix(self.state + steps)
            self.state = self.state + np.uint64(n) * GAMMA
        return out

    def uniform(self, shape) -> np.ndarray:
        """Floats in the open interval (0, 1) with 53 random bits."""
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return ((bits.astype(np.float64) + 0.5) / 2.0**53).reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u1 = self.uniform((half,))
        u2 = self.uniform((half,))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return (std * z).reshape(shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        span = np.uint64(high - low)
        return (self.next_u64(n) % span).astype(np.int64).reshape(shape) + low

    def fork(self, label: str) -> "SplitMix64":
        """Independent child stream keyed by ``label``; does not advance this stream."""
        h = int(self.state)
        for ch in label.encode():
            h = (h * 0x100000001B3 ^ ch) & 0xFFFFFFFFFFFFFFFF
        return SplitMix64(int(_mix(np.array([h], dtype=np.uint64))[0]))
