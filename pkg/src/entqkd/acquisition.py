"""Sync-pulse emission and coincidence matching.

Alice fires one sync pulse per detection (OR of her four channels). Bob
pairs his detections with sync pulses that arrive within the coincidence
window; the pulse's sequence number is the pairing handle both sites use
afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .photon_sim import Basis, EventStream, Site, decode_detector

DEFAULT_WINDOW_TICKS = 8  # 10 ns at 1.25 ns per tick


@dataclass
class SyncStream:
    ticks: np.ndarray
    seqs: np.ndarray

    def __len__(self) -> int:
        return len(self.ticks)

    def __iter__(self):
        return iter(zip(self.ticks.tolist(), self.seqs.tolist()))


@dataclass
class RawRecords:
    """Column-wise RawRecord list: (seq, basis, bit) at one site."""

    site: Site
    seqs: np.ndarray
    bases: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        self.seqs = np.asarray(self.seqs, dtype=np.int64)
        self.bases = np.asarray(self.bases, dtype=np.uint8)
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if not len(self.seqs) == len(self.bases) == len(self.bits):
            raise IntegrityError("record columns differ in length")

    def __len__(self) -> int:
        return len(self.seqs)

    def __iter__(self):
        for s, b, x in zip(self.seqs.tolist(), self.bases.tolist(), self.bits.tolist()):
            yield s, Basis(b), x

    def take(self, sl) -> "RawRecords":
        return RawRecords(self.site, self.seqs[sl], self.bases[sl], self.bits[sl])


def emit_sync(alice_events: EventStream, delay_ticks: int = 0) -> SyncStream:
    ticks = np.asarray(alice_events.ticks, dtype=np.uint64) + np.uint64(delay_ticks)
    return SyncStream(ticks, np.arange(len(ticks), dtype=np.int64))


def _check_sorted(ticks: np.ndarray, what: str) -> None:
    if len(ticks) > 1 and not np.all(ticks[1:] >= ticks[:-1]):
        raise ValueError(f"{what} must be tick-ordered")


def match_coincidences(syncs: SyncStream, bob_events: EventStream, window_ticks: int = DEFAULT_WINDOW_TICKS):
    """Pair sync pulses with Bob detections.

    A pulse and an event match iff ``|Δtick| <= window_ticks`` and each is
    the other's only candidate; every party to an ambiguous candidate set
    is dropped. Returns ``(seqs, event_indices)`` ordered by seq.
    """
    s = np.asarray(syncs.ticks, dtype=np.int64)
    e = np.asarray(bob_events.ticks, dtype=np.int64)
    _check_sorted(s, "sync pulses")
    _check_sorted(e, "bob events")
    w = int(window_ticks)
    # candidate pulse range per event, candidate event range per pulse
    lo = np.searchsorted(s, e - w, side="left")
    hi = np.searchsorted(s, e + w, side="right")
    ev_deg = hi - lo
    s_deg = np.searchsorted(e, s + w, side="right") - np.searchsorted(e, s - w, side="left")
    ok = ev_deg == 1
    ev_idx = np.nonzero(ok)[0]
    pulse_idx = lo[ok]
    keep = s_deg[pulse_idx] == 1
    ev_idx, pulse_idx = ev_idx[keep], pulse_idx[keep]
    return np.asarray(syncs.seqs)[pulse_idx], ev_idx


def to_raw_records(matches, alice_events: EventStream, bob_events: EventStream):
    """Decode matched detections into aligned Alice and Bob records."""
    seqs, ev_idx = (np.asarray(m, dtype=np.int64) for m in matches)
    if len(seqs) != len(ev_idx):
        raise IntegrityError("match lists are not aligned")
    if len(seqs) and (seqs.min() < 0 or seqs.max() >= len(alice_events)):
        raise IntegrityError("match seq outside Alice's event stream")
    if len(ev_idx) and (ev_idx.min() < 0 or ev_idx.max() >= len(bob_events)):
        raise IntegrityError("match index outside Bob's event stream")
    a_basis, a_bit = decode_detector(alice_events.detectors[seqs])
    b_basis, b_bit = decode_detector(bob_events.detectors[ev_idx])
    return (
        RawRecords(Site.ALICE, seqs, a_basis, a_bit),
        RawRecords(Site.BOB, seqs, b_basis, b_bit),
    )


def alice_records_at(alice_events: EventStream, seqs) -> RawRecords:
    """Alice's records for the seqs Bob announced."""
    seqs = np.asarray(seqs, dtype=np.int64)
    if len(seqs) and (seqs.min() < 0 or seqs.max() >= len(alice_events)):
        raise IntegrityError("announced seq outside Alice's event stream")
    basis, bit = decode_detector(alice_events.detectors[seqs])
    return RawRecords(Site.ALICE, seqs, basis, bit)
