"""Deterministic Gaussian noise from a counter-based SplitMix64 generator.

All randomness in this package flows through :class:`NoiseStream`.  The
generator algorithm is pinned exactly, so runs are bit-reproducible
across platforms and numpy versions:

* the i-th raw 64-bit word of a stream with seed word ``s`` is
  ``mix64(s + (i + 1) * GOLDEN_GAMMA)`` where ``mix64`` is the SplitMix64
  finalizer (Steele, Lea & Flood 2014) and ``GOLDEN_GAMMA`` is the odd
  64-bit golden-ratio constant;
* uniforms take the top 53 bits, mapped into (0, 1];
* standard normals come from the Box-Muller transform applied to
  consecutive uniform pairs.

Child streams are derived by hashing integer keys into the seed word, so
independent experiment components (subject, level, trial block, ...) own
non-overlapping streams without coordination.
"""

from __future__ import annotations

import numpy as np

__all__ = ["NoiseStream", "gaussian_noise"]

_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_KEY_SALT = np.uint64(0xD1B54A32D192ED03)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _seed_word(seed: int) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


class NoiseStream:
    """A seekable, splittable source of uniforms and standard normals."""

    def __init__(self, seed: int, _counter: int = 0):
        self._seed = _seed_word(seed)
        self._counter = int(_counter)

    @property
    def seed(self) -> int:
        return int(self._seed)

    def substream(self, *keys: int) -> "NoiseStream":
        """Derive an independent child stream from integer keys.

        Each key folds into the seed word as
        ``s <- mix64(s XOR mix64((key + 1) * KEY_SALT))``; the child starts
        at counter zero.
        """
        s = np.asarray([self._seed], dtype=np.uint64)
        with np.errstate(over="ignore"):
            for k in keys:
                kw = np.asarray([(int(k) + 1)], dtype=np.uint64) * _KEY_SALT
                s = _mix64(s ^ _mix64(kw))
        return NoiseStream(int(s[0]))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._seed + idx * _GOLDEN_GAMMA)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform in (0, 1] (top 53 bits of each word)."""
        words = self._raw(int(n))
        return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """n standard-normal doubles via Box-Muller on uniform pairs."""
        n = int(n)
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        u1, u2 = u[:m], u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def normal_grid(self, shape) -> np.ndarray:
        """Standard-normal array of the given shape."""
        shape = tuple(int(s) for s in shape)
        total = 1
        for s in shape:
            total *= s
        return self.normals(total).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by this stream."""
        n = int(n)
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniforms(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))  # uniform in 0..i
            if j > i:  # guards the u == 1.0 endpoint
                j = i
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def gaussian_noise(seed: int, shape) -> np.ndarray:
    """Seeded white-noise grid; same seed and shape give identical output."""
    return NoiseStream(seed).normal_grid(shape)
