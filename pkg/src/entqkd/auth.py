"""Wegman-Carter message authentication from a one-time key pool.

A tag is a Toeplitz hash of the message XOR a fresh one-time pad taken from
the pool. :func:`tag`/:func:`verify` draw the hash seed fresh for every
message. :class:`SessionAuthenticator` draws one hash key per session and a
fresh pad per frame, which keeps pool use at ``tag_bits`` per frame; messages
are padded as ``bits || 1 || 0...`` to a fixed width so one key serves all
lengths.
"""

from __future__ import annotations

import hmac
import os
import struct
from pathlib import Path

import numpy as np

from . import drbg
from .bits import bytes_to_bits
from .errors import AuthError, PoolExhausted
from .privacy_amp import toeplitz_hash

TAG_BITS = 64
DEFAULT_POOL_BITS = 1 << 20
DEFAULT_MAX_MESSAGE_BITS = 1 << 16


class AuthKeyPool:
    """Ordered secret bits with a consumption offset that only advances.

    With ``path`` set, the pool is persisted as an 8-byte little-endian
    consumed offset followed by the packed bits.
    """

    def __init__(self, bits, consumed: int = 0, low_watermark: int = 0, path=None, audit: bool = False):
        self._bits = np.asarray(bits, dtype=np.uint8)
        if not 0 <= consumed <= len(self._bits):
            raise ValueError("consumed offset outside pool")
        self.consumed = consumed
        self.low_watermark = low_watermark
        self.path = Path(path) if path is not None else None
        self.log: list[tuple[int, int, str]] | None = [] if audit else None

    @classmethod
    def bootstrap(cls, seed: int, nbits: int = DEFAULT_POOL_BITS, **kw) -> "AuthKeyPool":
        """Pre-shared pool expanded from a secret shared out of band."""
        return cls(drbg.random_bits(nbits - nbits % 8, drbg.derive("auth-pool", seed)), **kw)

    @classmethod
    def load(cls, path, **kw) -> "AuthKeyPool":
        data = Path(path).read_bytes()
        if len(data) < 8:
            raise ValueError("pool file too short")
        (consumed,) = struct.unpack_from("<Q", data)
        return cls(bytes_to_bits(data[8:]), consumed, path=path, **kw)

    @property
    def size(self) -> int:
        return len(self._bits)

    @property
    def available(self) -> int:
        return len(self._bits) - self.consumed

    @property
    def below_watermark(self) -> bool:
        return self.available < self.low_watermark

    def take(self, n: int, purpose: str = "") -> np.ndarray:
        if n < 0:
            raise ValueError("negative bit count")
        if n > self.available:
            raise PoolExhausted(f"auth pool needs {n} bits, {self.available} left")
        out = self._bits[self.consumed:self.consumed + n].copy()
        if self.log is not None:
            self.log.append((self.consumed, n, purpose))
        self.consumed += n
        self._persist_offset()
        return out

    def replenish(self, bits) -> int:
        """Append fresh key; trailing bits beyond a whole byte are dropped."""
        bits = np.asarray(bits, dtype=np.uint8)
        bits = bits[:len(bits) - len(bits) % 8]
        if self.size % 8:
            raise ValueError("pool size must stay byte aligned")
        self._bits = np.concatenate([self._bits, bits])
        self.save()
        return len(bits)

    def save(self, path=None) -> None:
        if path is not None:
            self.path = Path(path)
        if self.path is None:
            return
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_bytes(struct.pack("<Q", self.consumed) + np.packbits(self._bits).tobytes())
        os.replace(tmp, self.path)

    def _persist_offset(self) -> None:
        if self.path is None or not self.path.exists():
            return
        fd = os.open(self.path, os.O_WRONLY)
        try:
            os.pwrite(fd, struct.pack("<Q", self.consumed), 0)
        finally:
            os.close(fd)


def tag(message: bytes, pool: AuthKeyPool, m: int = TAG_BITS) -> np.ndarray:
    """Tag with a per-message hash seed and pad; returns m tag bits."""
    x = bytes_to_bits(message)
    need = len(x) + m - 1 + m
    if pool.available < need:
        raise PoolExhausted("authentication unavailable: pool underflow")
    seed = pool.take(len(x) + m - 1, "auth-seed")
    pad = pool.take(m, "auth-pad")
    return toeplitz_hash(x, seed, m) ^ pad


def verify(message: bytes, tag_bits, pool: AuthKeyPool, m: int = TAG_BITS) -> bool:
    expected = tag(message, pool, m)
    return hmac.compare_digest(np.packbits(expected).tobytes(), np.packbits(np.asarray(tag_bits, np.uint8)).tobytes())


def replenish(pool: AuthKeyPool, final_key_bits) -> AuthKeyPool:
    pool.replenish(final_key_bits)
    return pool


def padded_hash(message_bits: np.ndarray, key: np.ndarray, width: int, m: int) -> np.ndarray:
    """Toeplitz hash of ``message || 1`` zero-extended to ``width`` bits.

    Only the one-positions contribute, so the zero tail is never built.
    """
    ones = np.flatnonzero(message_bits)
    ones = np.append(ones, len(message_bits))
    idx = (width - 1 - ones)[None, :] + np.arange(m)[:, None]
    return (key[idx].sum(axis=1, dtype=np.int64) & 1).astype(np.uint8)


class SessionAuthenticator:
    """Per-frame tags for one session; both peers consume the pool in lockstep."""

    def __init__(self, pool: AuthKeyPool, tag_bits: int = TAG_BITS, max_message_bits: int = DEFAULT_MAX_MESSAGE_BITS):
        self.pool = pool
        self.tag_bits = tag_bits
        self.width = max_message_bits
        self.key = pool.take(max_message_bits + tag_bits - 1, "session-hash-key")

    @property
    def offset(self) -> int:
        return self.pool.consumed

    def _mac(self, message: bytes) -> np.ndarray:
        x = bytes_to_bits(message)
        if len(x) >= self.width:
            raise AuthError(f"message of {len(x)} bits exceeds authenticated width {self.width}")
        pad = self.pool.take(self.tag_bits, "frame-pad")
        return padded_hash(x, self.key, self.width, self.tag_bits) ^ pad

    def sign(self, message: bytes) -> bytes:
        """Tag bytes for a message whose auth offset is :attr:`offset`."""
        return np.packbits(self._mac(message)).tobytes()

    def check(self, message: bytes, offset: int, tag_bytes: bytes) -> None:
        if offset < self.pool.consumed:
            raise AuthError(f"stale auth offset {offset} (replay?)")
        if offset != self.pool.consumed:
            raise AuthError(f"auth pool desynchronized: peer at {offset}, local at {self.pool.consumed}")
        expected = np.packbits(self._mac(message)).tobytes()
        if not hmac.compare_digest(expected, bytes(tag_bytes)):
            raise AuthError("frame tag does not verify")
