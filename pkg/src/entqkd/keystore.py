"""Final-key store and the one-time-pad cipher."""

from __future__ import annotations

import logging
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bits import bytes_to_bits
from .errors import KeyReuseError, KeyUnavailable

log = logging.getLogger(__name__)

STORE_MAGIC = b"QKDKEY1\0"
TO_APP, TO_AUTH = 0, 1
DEFAULT_CAP_BITS = 1 << 32


@dataclass
class KeyHandle:
    offset: int
    bits: np.ndarray
    used: bool = False

    @property
    def all_zero(self) -> bool:
        return not self.bits.any()


@dataclass
class _Provenance:
    block_id: int
    start: int
    length: int
    consumer: int


@dataclass
class KeyStore:
    """FIFO of final key bits. Every bit goes to exactly one consumer:
    the application (via :meth:`get_key`) or auth replenishment."""

    cap_bits: int = DEFAULT_CAP_BITS
    _bits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    consumed: int = 0
    blocks: list = field(default_factory=list)
    delivered: list = field(default_factory=list)
    auth_reserved: int = 0

    def __post_init__(self):
        self._cond = threading.Condition()

    @property
    def total(self) -> int:
        return len(self._bits)

    @property
    def available(self) -> int:
        return self.total - self.consumed

    def add_final(self, block_id: int, bits, to_auth: bool = False) -> None:
        bits = np.asarray(bits, dtype=np.uint8)
        with self._cond:
            if to_auth:
                self.blocks.append(_Provenance(block_id, -1, len(bits), TO_AUTH))
                self.auth_reserved += len(bits)
                return
            self.blocks.append(_Provenance(block_id, self.total, len(bits), TO_APP))
            self._bits = np.concatenate([self._bits, bits])
            self._cond.notify_all()

    def get_key(self, n: int, timeout: float = 0.0) -> KeyHandle:
        """Exactly n bits, or KeyUnavailable after ``timeout`` seconds."""
        if n <= 0:
            raise ValueError("requested key length must be > 0")
        if n > self.cap_bits:
            raise KeyUnavailable(f"request of {n} bits exceeds store cap")
        deadline = time.monotonic() + timeout
        with self._cond:
            while self.available < n:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise KeyUnavailable(f"{n} bits requested, {self.available} available")
                self._cond.wait(remaining)
            return self._deliver(self.consumed, n)

    def take_range(self, offset: int, n: int) -> KeyHandle:
        """The peer-side counterpart of a key already used at ``offset``."""
        with self._cond:
            if offset < self.consumed:
                raise KeyReuseError(f"key bits at offset {offset} already consumed")
            if offset + n > self.total:
                raise KeyUnavailable("key range not yet produced")
            return self._deliver(offset, n)

    def _deliver(self, offset: int, n: int) -> KeyHandle:
        handle = KeyHandle(offset, self._bits[offset:offset + n].copy())
        self.delivered.append((offset, n))
        self.consumed = offset + n
        if handle.all_zero:
            log.warning("delivered an all-zero key of %d bits at offset %d", n, offset)
        return handle

    def to_bytes(self) -> bytes:
        out = bytearray(STORE_MAGIC)
        out += struct.pack("<QQI", self.consumed, self.total, len(self.blocks))
        for b in self.blocks:
            out += struct.pack("<IiIB", b.block_id, b.start, b.length, b.consumer)
        out += np.packbits(self._bits).tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyStore":
        if data[:8] != STORE_MAGIC:
            raise ValueError("not a key store file")
        consumed, total, nblocks = struct.unpack_from("<QQI", data, 8)
        pos = 8 + 20
        store = cls()
        rec = struct.Struct("<IiIB")
        for _ in range(nblocks):
            store.blocks.append(_Provenance(*rec.unpack_from(data, pos)))
            pos += rec.size
        store._bits = bytes_to_bits(data[pos:])[:total].copy()
        store.consumed = consumed
        store.auth_reserved = sum(b.length for b in store.blocks if b.consumer == TO_AUTH)
        return store

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "KeyStore":
        return cls.from_bytes(Path(path).read_bytes())


def _xor(data: bytes, handle: KeyHandle) -> bytes:
    if handle.used:
        raise KeyReuseError("one-time key handle already used")
    if len(handle.bits) != 8 * len(data):
        raise ValueError(f"key holds {len(handle.bits)} bits, message needs {8 * len(data)}")
    handle.used = True
    if handle.all_zero:
        log.warning("one-time pad key is all zeros; ciphertext equals plaintext")
    pad = np.packbits(handle.bits).tobytes()
    return (np.frombuffer(data, dtype=np.uint8) ^ np.frombuffer(pad, dtype=np.uint8)).tobytes()


def otp_encrypt(plaintext: bytes, handle: KeyHandle) -> bytes:
    return _xor(plaintext, handle)


def otp_decrypt(ciphertext: bytes, handle: KeyHandle) -> bytes:
    return _xor(ciphertext, handle)
