"""Toeplitz-matrix universal hashing and the final-length rule."""

from __future__ import annotations

import math
import secrets
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ProtocolError


@dataclass(frozen=True)
class PaParams:
    q_device: float = 0.037
    safety_bits: int = 30

    def __post_init__(self):
        if self.safety_bits < 0:
            raise ValueError("safety_bits must be >= 0")


@dataclass(frozen=True)
class ToeplitzSeed:
    """Defines an m x n Toeplitz matrix by its n + m - 1 diagonal values."""

    bits: np.ndarray
    n: int
    m: int
    origin: str = "explicit"

    def __post_init__(self):
        if len(self.bits) != self.n + self.m - 1:
            raise ValueError(f"Toeplitz seed must hold n + m - 1 = {self.n + self.m - 1} bits")

    @classmethod
    def random(cls, n: int, m: int, rng=None) -> "ToeplitzSeed":
        """Fresh seed; ``rng`` is a numpy Generator, else the OS CSPRNG."""
        length = n + m - 1
        if rng is None:
            raw = secrets.token_bytes((length + 7) // 8)
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=length)
        else:
            bits = rng.integers(0, 2, length, dtype=np.uint8)
        return cls(bits, n, m)


def h2(x: float) -> float:
    """Binary entropy in bits."""
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def final_length(n: int, leaked: int, q_channel: float, params: PaParams = PaParams()) -> int:
    """n - leaked - ceil(n * h2(q_channel)) - safety_bits, floored at 0."""
    if n <= 0:
        raise ValueError("n must be > 0")
    if not 0 <= leaked <= n:
        raise ValueError("leaked must lie in [0, n]")
    if not 0.0 <= q_channel < 0.5:
        raise ValueError("q_channel must lie in [0, 0.5)")
    return max(0, n - leaked - math.ceil(n * h2(q_channel)) - params.safety_bits)


def toeplitz_matrix(seed_bits, n: int, m: int) -> np.ndarray:
    """Read-only view T with T[i, j] = seed[i - j + n - 1]."""
    seed_bits = np.asarray(seed_bits, dtype=np.uint8)
    if len(seed_bits) != n + m - 1:
        raise ValueError("seed length must be n + m - 1")
    return sliding_window_view(seed_bits[::-1], n)[::-1]


def toeplitz_hash(bits, seed, m: int | None = None) -> np.ndarray:
    """GF(2) product of the Toeplitz matrix with ``bits``.

    ``seed`` is a :class:`ToeplitzSeed` or a raw bit array of length n + m - 1.
    """
    x = np.asarray(bits, dtype=np.uint8)
    n = len(x)
    if isinstance(seed, ToeplitzSeed):
        if m is None:
            m = seed.m
        if seed.n != n or seed.m != m:
            raise ValueError("seed dimensions do not match input and output lengths")
        seed = seed.bits
    if m is None:
        raise ValueError("output length required")
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    if len(seed) != n + m - 1:
        raise ValueError(f"seed length {len(seed)} != n + m - 1 = {n + m - 1}")
    t = toeplitz_matrix(seed, n, m)
    ones = np.flatnonzero(x)
    if not len(ones):
        return np.zeros(m, dtype=np.uint8)
    return (t[:, ones].sum(axis=1, dtype=np.int64) & 1).astype(np.uint8)


class SeedRegistry:
    """Rejects a privacy-amplification seed that was already used."""

    def __init__(self):
        self._seen: set[bytes] = set()

    def check(self, seed_bits) -> None:
        key = np.packbits(np.asarray(seed_bits, dtype=np.uint8)).tobytes() + len(seed_bits).to_bytes(4, "little")
        if key in self._seen:
            raise ProtocolError("privacy amplification seed reused")
        self._seen.add(key)


def amplify(bits, seed, m: int) -> np.ndarray:
    return toeplitz_hash(bits, seed, m)
