"""Deterministic random streams for simulation and training.

Every bulk draw derives a fresh call seed from a sequential splitmix64 master
state, then hands it to the active kernel backend, which gives each array
element its own substream.  Identical seed + identical call order therefore
reproduce identical samples, on either backend, regardless of array shapes
drawn in between.
"""

import numpy as np

from .backend import kernels

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * _M1 & _MASK
    z = (z ^ (z >> 27)) * _M2 & _MASK
    return z ^ (z >> 31)


class Rng:
    """Seeded generator; one instance per worker/image for parallel safety."""

    def __init__(self, seed: int):
        self._state = _mix64(int(seed) & _MASK)

    def _call_seed(self) -> np.uint64:
        self._state = (self._state + _GOLDEN) & _MASK
        return np.uint64(_mix64(self._state))

    def derive_seed(self, index: int) -> int:
        """Stable child seed for item `index`; does not advance this stream."""
        return _mix64((self._state ^ _mix64(index & _MASK)) & _MASK)

    def spawn(self, index: int) -> "Rng":
        """Independent child stream, e.g. one per dataset item."""
        return Rng(self.derive_seed(index))

    def uniform(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        out = kernels().rng_uniform(self._call_seed(), int(np.prod(shape)))
        return out.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        out = kernels().rng_normal(self._call_seed(), int(np.prod(shape)))
        return out.reshape(shape)

    def poisson(self, lam: np.ndarray, crossover: float = 30.0) -> np.ndarray:
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam < 0):
            raise ValueError("poisson mean must be nonnegative")
        out = kernels().rng_poisson(self._call_seed(), lam.ravel(), float(crossover))
        return out.reshape(lam.shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Uniform integers in [low, high)."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.uniform(shape)
        return low + np.minimum((u * (high - low)).astype(np.int64), high - low - 1)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable")


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
