"""Seeded, replayable Brownian increment sources.

Every stream is a Philox counter-based generator keyed by ``(seed,
stream_id)``, where ``stream_id`` is a tuple of nonnegative integers such as
``(role, replica, particle)``.  Distinct ids give statistically independent
streams; the same id always replays the same sequence, no matter how the
draws are chunked.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

# roles used as the first component of stream ids
ROLE = {
    "flow": 0,
    "particle": 1,
    "reference": 2,
    "x_cloud": 3,
    "y_cloud": 4,
    "init": 5,
    "fallback": 6,
    "sampler": 7,
    "init_pair": 8,
}


def _key(stream_id):
    if isinstance(stream_id, (int, np.integer)):
        stream_id = (int(stream_id),)
    key = tuple(int(s) for s in stream_id)
    if any(k < 0 for k in key):
        raise InvalidInputError("stream ids must be nonnegative")
    return key


class NoiseStream:
    """Standard normal draws for one Brownian motion (or any random use).

    Parameters
    ----------
    seed : int
        64-bit master seed.
    stream_id : int or tuple of int
        Identifier of the substream.
    """

    def __init__(self, seed, stream_id=0):
        if int(seed) < 0 or int(seed) >= 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream_id = _key(stream_id)
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=self.stream_id)))

    def normals(self, shape):
        """Next standard normals with the given shape (row-major consumption)."""
        out = self._gen.standard_normal(shape)
        self.position += out.size
        return out

    def uniforms(self, shape):
        out = self._gen.random(shape)
        self.position += out.size
        return out

    def increments(self, h, n_steps, dim):
        """``n_steps`` Brownian increments of variance ``h``, shape ``(n_steps, dim)``."""
        if not h > 0:
            raise InvalidInputError("step h must be positive")
        return np.sqrt(h) * self.normals((n_steps, dim))

    def replay(self):
        """A fresh stream positioned at the start of the same sequence."""
        return NoiseStream(self.seed, self.stream_id)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id}, position={self.position})"


class NoiseBank:
    """A stack of streams drawn together, in time-major chunks.

    ``next(n)`` returns standard normals of shape ``(n, *shape, dim)`` where
    ``shape`` is the shape of the ``ids`` array of stream ids.  Each stream's
    values are independent of the chunk size.
    """

    def __init__(self, seed, ids, dim, chunk=256):
        ids = list(ids)
        if not ids:
            raise InvalidInputError("NoiseBank needs at least one stream")
        self.streams = [NoiseStream(seed, i) for i in ids]
        self.dim = int(dim)
        self.chunk = int(chunk)
        self._buf = None
        self._pos = 0

    @classmethod
    def grid(cls, seed, role, shape, dim, chunk=256, prefix=()):
        """Streams with ids ``(role, *prefix, *index)`` for every index of ``shape``."""
        shape = tuple(int(s) for s in shape)
        ids = [(ROLE.get(role, role),) + tuple(prefix) + idx for idx in np.ndindex(*shape)]
        bank = cls(seed, ids, dim, chunk)
        bank.shape = shape
        return bank

    shape = None

    def _refill(self):
        block = np.stack([s.normals((self.chunk, self.dim)) for s in self.streams], axis=1)
        self._buf = block
        self._pos = 0

    def next(self, n=1):
        parts = []
        need = n
        while need > 0:
            if self._buf is None or self._pos >= self.chunk:
                self._refill()
            take = min(need, self.chunk - self._pos)
            parts.append(self._buf[self._pos : self._pos + take])
            self._pos += take
            need -= take
        out = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        shape = self.shape if self.shape is not None else (len(self.streams),)
        return out.reshape((n,) + shape + (self.dim,))

    def step(self):
        """One standard normal vector per stream, shape ``(*shape, dim)``."""
        return self.next(1)[0]


def aggregate_increments(fine, factor):
    """Sum consecutive groups of ``factor`` increments along axis 0."""
    fine = np.asarray(fine)
    if fine.shape[0] % factor:
        raise InvalidInputError("number of fine steps must be a multiple of the factor")
    return fine.reshape((fine.shape[0] // factor, factor) + fine.shape[1:]).sum(axis=1)
