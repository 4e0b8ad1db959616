"""Deterministic, splittable random number generation.

Every stochastic choice in this package (parameter init, data synthesis,
batch sampling, augmentation) draws from an ``Rng``.  Streams are
counter-based SplitMix64 generators, so the n-th draw of a stream depends
only on the stream seed and n.  ``child(purpose)`` derives an independent
stream from the parent seed and a purpose string; consumers that hold
different children can draw in any order, or not at all, without shifting
each other's values.
"""

import numpy as np

_U64 = np.uint64
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = float(2.0**-53)


def _mix(z):
    """SplitMix64 finalizer on uint64 (wraparound is the point)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(_MIX1)
        z = (z ^ (z >> _U64(27))) * _U64(_MIX2)
        return z ^ (z >> _U64(31))


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


class Rng:
    """One SplitMix64 stream plus the ability to split off named children."""

    def __init__(self, seed: int):
        self._seed = int(seed) & _MASK
        self._drawn = 0

    @property
    def seed(self) -> int:
        return self._seed

    def child(self, purpose: str) -> "Rng":
        """Independent stream keyed by ``purpose``; unaffected by draws made here."""
        return Rng(int(_mix(_U64(self._seed ^ _fnv1a(purpose.encode("utf-8"))))))

    def _raw(self, n: int) -> np.ndarray:
        counters = _U64(self._seed) + _U64(_GOLDEN) * (
            np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        )
        self._drawn += n
        return _mix(counters)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0, dtype=np.float32):
        """Array of draws from [low, high); scalar float for an empty shape."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._raw(n) >> _U64(11)).astype(np.float64) * _INV_2_53
        out = (low + (high - low) * u).astype(dtype).reshape(shape)
        return out if shape else float(out[()])

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0, dtype=np.float32):
        """Gaussian draws via Box-Muller on paired uniforms."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1)
        u1 = ((raw[:pairs] >> _U64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[pairs:] >> _U64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = (mean + std * z).astype(dtype).reshape(shape)
        return out if shape else float(out[()])

    def integers(self, bound: int, shape=()):
        """Integers in [0, bound) via the multiply-shift range map."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        # keep the product in Python ints: numpy would overflow at 128 bits
        vals = np.array(
            [(int(v) * bound) >> 64 for v in self._raw(n)], dtype=np.int64
        ).reshape(shape)
        return vals if shape else int(vals[()])
