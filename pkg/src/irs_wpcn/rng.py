"""Seeded random streams shared by every stochastic routine in the package.

All randomness flows through :class:`Stream`, a thin wrapper around numpy's
counter-based Philox4x64 generator keyed directly by the user seed.  Gaussian
variates are produced with the Box-Muller transform on the uniform stream so
that the byte sequence of a dataset depends only on the seed and the
documented algorithm, not on numpy's internal normal sampler.
"""
from __future__ import annotations

import numpy as np

#: Identifier written to dataset headers: Philox4x64 keyed by seed + Box-Muller.
PRNG_ID = 1
PRNG_NAME = "philox4x64-boxmuller"


class Stream:
    """A reproducible uniform/Gaussian stream."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self._gen.random(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def normal(self, size) -> np.ndarray:
        """Standard normal variates via Box-Muller (pairs drawn as u1, u2)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u = self._gen.random(2 * half).reshape(half, 2)
        # 1 - u lies in (0, 1], so the log is finite
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        phi = 2.0 * np.pi * u[:, 1]
        z = np.empty((half, 2))
        z[:, 0] = r * np.cos(phi)
        z[:, 1] = r * np.sin(phi)
        return z.reshape(-1)[:n].reshape(shape)

    def complex_normal(self, size, variance: float) -> np.ndarray:
        """Circularly-symmetric complex Gaussian with total variance ``variance``."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        z = self.normal(shape + (2,))
        scale = np.sqrt(variance / 2.0)
        return scale * (z[..., 0] + 1j * z[..., 1])

    def spawn(self, index: int) -> "Stream":
        """Independent child stream for per-sample parallel work."""
        return Stream(_mix(self.seed, index))


def _mix(seed: int, index: int) -> int:
    # splitmix64 finaliser over (seed, index)
    mask = (1 << 64) - 1
    z = (seed * 0x9E3779B97F4A7C15 + index + 1) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)
