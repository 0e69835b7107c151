"""Seeded random streams and ordering primitives.

Tensors throughout the package are plain ``numpy.ndarray`` objects of dtype
float64. Randomness comes exclusively from :class:`PrngStream`, a
counter-based generator keyed by ``(seed, stream_id)``. Streams are never
shared between concurrent consumers; instead a consumer derives its own
sub-stream with :meth:`PrngStream.child`, e.g. one per (level, epoch,
MC-sample index).
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import InvalidParameter

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


def _derive_id(stream_id, path):
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", stream_id))
    for key in path:
        if isinstance(key, (int, np.integer)):
            h.update(b"i" + struct.pack("<q", int(key)))
        else:
            h.update(b"s" + str(key).encode("utf-8") + b"\x00")
    return struct.unpack("<Q", h.digest())[0]


class PrngStream:
    """Counter-based random stream (Philox4x64 keyed by ``(seed, stream_id)``).

    Identical ``(seed, stream_id)`` pairs replay identical draws on any
    platform; the keys are independent Philox keys, so distinct stream ids
    give independent sequences.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        seed = int(seed)
        stream_id = int(stream_id)
        if not (0 <= seed <= _MASK64 and 0 <= stream_id <= _MASK64):
            raise InvalidParameter("seed and stream_id must be unsigned 64-bit integers")
        self.seed = seed
        self.stream_id = stream_id
        self._bitgen = np.random.Philox(key=np.array([seed, stream_id], dtype=np.uint64))

    def __repr__(self):
        return f"PrngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, *path) -> "PrngStream":
        """Return an independent stream addressed by ``path`` (ints or strings).

        The child depends only on this stream's key and ``path``, not on how
        many draws have already been taken from this stream.
        """
        return PrngStream(self.seed, _derive_id(self.stream_id, path))

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n)).astype(np.uint64, copy=False)

    def uniform(self, shape) -> np.ndarray:
        """Doubles in [0, 1) with 53 bits of resolution."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / 9007199254740992.0)).reshape(shape)

    def standard_normal(self, shape) -> np.ndarray:
        """Box-Muller transform over pairs of uniforms."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform((2, m))
        radius = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
        angle = _TWO_PI * u[1]
        z = np.empty(2 * m)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n].reshape(shape)

    def signs(self, shape) -> np.ndarray:
        """Uniform draws from {-1, +1}."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = (self.raw(n) >> np.uint64(63)).astype(np.float64)
        return (2.0 * bits - 1.0).reshape(shape)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers uniform on [0, high)."""
        if high < 1:
            raise InvalidParameter("high must be >= 1")
        return np.floor(self.uniform(size) * high).astype(np.int64)


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise InvalidParameter(f"negative dimension in shape {shape}")
    return shape


def gaussian_sample(stream: PrngStream, mean: float, std: float, shape) -> np.ndarray:
    """I.i.d. N(mean, std**2) draws; ``std == 0`` returns the constant ``mean``."""
    if not std >= 0:
        raise InvalidParameter(f"std must be non-negative, got {std}")
    z = stream.standard_normal(shape)
    return mean + std * z


def permutation(stream: PrngStream, n: int) -> np.ndarray:
    """Fisher-Yates shuffle of ``0..n-1`` driven by ``stream``."""
    if n < 0:
        raise InvalidParameter("n must be non-negative")
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    u = stream.uniform(n - 1)
    # position i (from the top) swaps with a uniform index in [0, i]
    js = np.floor(u * np.arange(n, 1, -1)).astype(np.int64)
    p = perm.tolist()
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = int(js[k])
        p[i], p[j] = p[j], p[i]
    return np.asarray(p, dtype=np.int64)


def stable_argsort_ascending(values) -> np.ndarray:
    """Indices sorting ``values`` ascending; ties keep their input order."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise InvalidParameter("values must be one-dimensional")
    if np.isnan(values).any():
        raise InvalidParameter("values contain NaN")
    return np.argsort(values, kind="stable").astype(np.int64)
