"""Monte Carlo stand-in for the entangled-pair source, fiber and detectors.

Time is quantized to 1.25 ns ticks (800 MHz sampling). Detector indices
encode (basis, bit) as ``2 * basis + bit``: 0=(Z,0), 1=(Z,1), 2=(X,0),
3=(X,1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

TICK_S = 1.25e-9
SPEED_IN_FIBER_NS_PER_M = 5.0

EVENT_MAGIC = b"QKDEVT1\0"
EVENT_DTYPE = np.dtype([("tick", "<u8"), ("detector", "u1")])
assert EVENT_DTYPE.itemsize == 9


class Basis(enum.IntEnum):
    Z = 0  # 0 degree
    X = 1  # 45 degree


class Site(enum.IntEnum):
    ALICE = 0
    BOB = 1


def detector_index(basis, bit):
    return 2 * basis + bit


def decode_detector(detector):
    """detector index -> (basis, bit); works on scalars and arrays."""
    return detector >> 1, detector & 1


@dataclass(frozen=True)
class SourceParams:
    pair_rate_hz: float = 8200.0
    visibility: float = 0.96
    qber_detector: float = 0.025
    qber_state: float = 0.012
    qber_channel_true: float = 0.027
    rng_seed: int = 1

    def __post_init__(self):
        if self.pair_rate_hz < 0:
            raise ValueError("pair_rate_hz must be >= 0")
        for name in ("visibility", "qber_detector", "qber_state", "qber_channel_true"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.qber_detector + self.qber_state >= 0.5:
            raise ValueError("device QBER must stay below 0.5")

    @property
    def qber_device(self) -> float:
        return self.qber_detector + self.qber_state

    @property
    def effective_visibility(self) -> float:
        """Visibility that reproduces the device QBER: 1 - 2 * qber_device."""
        return 1.0 - 2.0 * self.qber_device


@dataclass(frozen=True)
class ChannelParams:
    fiber_length_km: float = 1.45
    attenuation_db_per_km: float = 3.2
    connector_loss_db: float = 1.36
    bob_detector_efficiency: float = 0.22
    dark_count_rate_hz: float = 100.0

    def __post_init__(self):
        for name in ("fiber_length_km", "attenuation_db_per_km", "connector_loss_db", "dark_count_rate_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.bob_detector_efficiency <= 1.0:
            raise ValueError("bob_detector_efficiency must lie in [0, 1]")

    @property
    def total_db(self) -> float:
        return self.fiber_length_km * self.attenuation_db_per_km + self.connector_loss_db

    @property
    def delay_ticks(self) -> int:
        """One-way propagation delay of the fiber in ticks."""
        return round(self.fiber_length_km * 1000.0 * SPEED_IN_FIBER_NS_PER_M / (TICK_S * 1e9))


class DetectionEvent(NamedTuple):
    tick: int
    detector: int
    site: Site

    @property
    def basis(self) -> Basis:
        return Basis(self.detector >> 1)

    @property
    def bit(self) -> int:
        return self.detector & 1


@dataclass
class EventStream:
    """Tick-ordered detection events of one site, stored column-wise."""

    site: Site
    ticks: np.ndarray
    detectors: np.ndarray

    def __post_init__(self):
        self.ticks = np.asarray(self.ticks, dtype=np.uint64)
        self.detectors = np.asarray(self.detectors, dtype=np.uint8)
        if self.ticks.shape != self.detectors.shape:
            raise ValueError("ticks and detectors must have equal length")

    def __len__(self) -> int:
        return len(self.ticks)

    def __iter__(self) -> Iterator[DetectionEvent]:
        for t, d in zip(self.ticks.tolist(), self.detectors.tolist()):
            yield DetectionEvent(t, d, self.site)

    def __getitem__(self, i: int) -> DetectionEvent:
        return DetectionEvent(int(self.ticks[i]), int(self.detectors[i]), self.site)

    @classmethod
    def from_events(cls, site: Site, events) -> "EventStream":
        events = list(events)
        return cls(site, [e[0] for e in events], [e[1] for e in events])

    def is_strictly_increasing(self) -> bool:
        return bool(np.all(self.ticks[1:] > self.ticks[:-1]))

    def to_bytes(self) -> bytes:
        header = EVENT_MAGIC + bytes([int(self.site)]) + bytes(7)
        rec = np.empty(len(self), dtype=EVENT_DTYPE)
        rec["tick"] = self.ticks
        rec["detector"] = self.detectors
        return header + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EventStream":
        if len(data) < 16 or data[:8] != EVENT_MAGIC:
            raise ValueError("not an event stream file")
        if (len(data) - 16) % EVENT_DTYPE.itemsize:
            raise ValueError("truncated event record")
        site = Site(data[8])
        rec = np.frombuffer(data, dtype=EVENT_DTYPE, offset=16)
        return cls(site, rec["tick"].copy(), rec["detector"].copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EventStream":
        return cls.from_bytes(Path(path).read_bytes())


def transmission_fraction(total_db: float) -> float:
    if total_db < 0 or math.isnan(total_db):
        raise ValueError("attenuation must be >= 0 dB")
    return 10.0 ** (-total_db / 10.0)


def pair_outcome(params: SourceParams, basis_a: Basis, basis_b: Basis, rng) -> tuple[int, int]:
    """Measurement results for one singlet pair, before channel errors."""
    bit_a = int(rng.integers(2))
    if basis_a == basis_b:
        anti = rng.random() < (1.0 + params.effective_visibility) / 2.0
        return bit_a, (1 - bit_a) if anti else bit_a
    return bit_a, int(rng.integers(2))


def pair_outcomes(params: SourceParams, basis_a: np.ndarray, basis_b: np.ndarray, rng):
    """Vectorized :func:`pair_outcome`."""
    n = len(basis_a)
    bit_a = rng.integers(0, 2, n, dtype=np.uint8)
    anti = rng.random(n) < (1.0 + params.effective_visibility) / 2.0
    same = basis_a == basis_b
    bit_b = np.where(same, np.where(anti, 1 - bit_a, bit_a), rng.integers(0, 2, n, dtype=np.uint8))
    return bit_a, bit_b.astype(np.uint8)


def _dark_counts(rate_hz: float, duration_s: float, rng):
    ticks, dets = [], []
    for det in range(4):
        k = rng.poisson(rate_hz * duration_s)
        ticks.append(rng.random(k) * duration_s)
        dets.append(np.full(k, det, dtype=np.uint8))
    return np.concatenate(ticks), np.concatenate(dets)


def _assemble(site: Site, times_s: np.ndarray, detectors: np.ndarray, offset_ticks: int = 0) -> EventStream:
    # floor to the tick grid; earlier-generated event wins a shared tick
    ticks = np.floor(times_s / TICK_S).astype(np.uint64) + np.uint64(offset_ticks)
    order = np.argsort(ticks, kind="stable")
    ticks, detectors = ticks[order], detectors[order]
    _, first = np.unique(ticks, return_index=True)
    return EventStream(site, ticks[first], detectors[first])


def simulate_run(source: SourceParams, channel: ChannelParams, duration_s: float, rng_seed: int | None = None):
    """Generate Alice's and Bob's detection streams for ``duration_s`` seconds.

    Bob's ticks include the fiber propagation delay. Returns
    ``(alice_events, bob_events)`` as :class:`EventStream` objects.
    """
    if not duration_s > 0:
        raise ValueError("duration_s must be > 0")
    seed = source.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)

    n_pairs = rng.poisson(source.pair_rate_hz * duration_s)
    t_pair = np.sort(rng.random(n_pairs) * duration_s)
    basis_a = rng.integers(0, 2, n_pairs, dtype=np.uint8)
    basis_b = rng.integers(0, 2, n_pairs, dtype=np.uint8)
    bit_a, bit_b = pair_outcomes(source, basis_a, basis_b, rng)
    flip = (rng.random(n_pairs) < source.qber_channel_true).astype(np.uint8)
    bit_b ^= flip
    survive = rng.random(n_pairs) < transmission_fraction(channel.total_db) * channel.bob_detector_efficiency

    dark_a_t, dark_a_d = _dark_counts(channel.dark_count_rate_hz, duration_s, rng)
    dark_b_t, dark_b_d = _dark_counts(channel.dark_count_rate_hz, duration_s, rng)

    alice = _assemble(
        Site.ALICE,
        np.concatenate([t_pair, dark_a_t]),
        np.concatenate([detector_index(basis_a, bit_a), dark_a_d]).astype(np.uint8),
    )
    bob = _assemble(
        Site.BOB,
        np.concatenate([t_pair[survive], dark_b_t]),
        np.concatenate([detector_index(basis_b, bit_b)[survive], dark_b_d]).astype(np.uint8),
        offset_ticks=channel.delay_ticks,
    )
    return alice, bob
