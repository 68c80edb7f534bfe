"""Deterministic randomness derived from shared session context.

Both peers must draw identical shuffles, sample sets and hash seeds without
exchanging them, so every such draw is keyed by a SHA-256 digest of a label
and integers (session id, block id, pass index). Streams come from
SHAKE-256 in counter mode; integers in ``[0, bound)`` use 32-bit words
with rejection, so results are reproducible by any implementation.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_CHUNK = 4096


def derive(label: str, *parts: int) -> bytes:
    h = hashlib.sha256(label.encode("ascii"))
    for p in parts:
        h.update(struct.pack("<Q", p & 0xFFFFFFFFFFFFFFFF))
    return h.digest()


class XofStream:
    """Endless byte stream: SHAKE-256(seed || counter) blocks."""

    def __init__(self, seed: bytes):
        self._seed = bytes(seed)
        self._counter = 0
        self._words = np.empty(0, dtype=np.uint32)
        self._pos = 0

    def _refill(self) -> None:
        block = hashlib.shake_256(self._seed + struct.pack("<Q", self._counter)).digest(_CHUNK)
        self._counter += 1
        self._words = np.frombuffer(block, dtype="<u4").astype(np.uint64)
        self._pos = 0

    def read_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            block = hashlib.shake_256(self._seed + b"B" + struct.pack("<Q", self._counter)).digest(_CHUNK)
            self._counter += 1
            out.extend(block)
        return bytes(out[:n])

    def word(self) -> int:
        if self._pos >= len(self._words):
            self._refill()
        w = int(self._words[self._pos])
        self._pos += 1
        return w

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), bound <= 2**32."""
        if bound <= 0 or bound > 1 << 32:
            raise ValueError("bound out of range")
        limit = ((1 << 32) // bound) * bound
        while True:
            w = self.word()
            if w < limit:
                return w % bound


def fisher_yates(n: int, seed: bytes) -> np.ndarray:
    """Uniform permutation of range(n) (Durstenfeld, high index first)."""
    perm = list(range(n))
    xof = XofStream(seed)
    for i in range(n - 1, 0, -1):
        j = xof.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def sample_indices(n: int, k: int, seed: bytes) -> np.ndarray:
    """k distinct indices from range(n), uniform without replacement, sorted."""
    if not 0 <= k <= n:
        raise ValueError("sample size out of range")
    pool = list(range(n))
    xof = XofStream(seed)
    for i in range(k):
        j = i + xof.below(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(np.asarray(pool[:k], dtype=np.int64))


def random_bits(n: int, seed: bytes) -> np.ndarray:
    data = XofStream(seed).read_bytes((n + 7) // 8)
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n)
