"""Bit-array helpers. Bits are numpy uint8 arrays holding 0/1 values."""

from __future__ import annotations

import numpy as np


def as_bits(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit arrays must be one-dimensional")
    if arr.size and arr.max() > 1:
        raise ValueError("bit arrays may only contain 0 and 1")
    return arr


def from_str(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def to_str(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


def pack(bits: np.ndarray) -> bytes:
    """MSB-first packing; the final byte is zero padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack(data: bytes, nbits: int) -> np.ndarray:
    if nbits > 8 * len(data):
        raise ValueError("not enough bytes for requested bit count")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=nbits)


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def parity(bits: np.ndarray) -> int:
    return int(np.bitwise_xor.reduce(bits)) if len(bits) else 0
