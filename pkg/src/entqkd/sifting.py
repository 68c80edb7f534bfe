"""Basis reconciliation and block assembly."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .acquisition import RawRecords
from .errors import IntegrityError

DEFAULT_BLOCK_TARGET = 2500


class Stage(enum.IntEnum):
    SIFTED = 0
    ESTIMATED = 1
    CORRECTED = 2
    FINAL = 3


@dataclass
class LeakLedger:
    estimation_disclosed: int = 0
    cascade_parities: int = 0
    verify_bits: int = 0
    pa_discarded: int = 0


@dataclass
class KeyBlock:
    block_id: int
    bits: np.ndarray
    first_seq: int
    last_seq: int
    wall_seconds: float = 0.0
    stage: Stage = Stage.SIFTED
    leak: LeakLedger = field(default_factory=LeakLedger)
    qber_estimated: float | None = None
    sifted_len: int = 0

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if not self.sifted_len:
            self.sifted_len = len(self.bits)

    def advance(self, stage: Stage) -> None:
        if stage != self.stage + 1:
            raise IntegrityError(f"illegal stage transition {self.stage.name} -> {stage.name}")
        self.stage = stage

    @property
    def acquisition_span(self):
        return self.first_seq, self.last_seq, self.wall_seconds


def announce_bases(records: RawRecords):
    """Public half of a record list: (seqs, bases). Bits stay local."""
    return records.seqs.copy(), records.bases.copy()


def sift(local: RawRecords, remote_bases, invert: bool = False):
    """Keep bits whose bases agree. Bob passes ``invert=True``.

    ``remote_bases`` is ``(seqs, bases)`` as produced by :func:`announce_bases`.
    Returns ``(seqs, bits, agree_mask)``.
    """
    r_seqs, r_bases = (np.asarray(x) for x in remote_bases)
    if len(r_seqs) != len(local) or not np.array_equal(r_seqs, local.seqs):
        raise IntegrityError("basis announcement is not aligned with local records")
    agree = local.bases == r_bases
    bits = local.bits[agree]
    if invert:
        bits = 1 - bits
    return local.seqs[agree], bits.astype(np.uint8), agree


def keep_agreed(local: RawRecords, agree_mask, invert: bool = False):
    """Apply the peer's agree/disagree answer to the announced records."""
    agree = np.asarray(agree_mask, dtype=bool)
    if len(agree) != len(local):
        raise IntegrityError("sift answer does not cover the announced records")
    bits = local.bits[agree]
    if invert:
        bits = 1 - bits
    return local.seqs[agree], bits.astype(np.uint8)


class BlockAssembler:
    """Cuts a sifted stream into consecutive blocks of exactly ``target`` bits.

    ``tick_of`` maps a seq to its sync tick; used to record how long each
    block took to acquire.
    """

    def __init__(self, target: int = DEFAULT_BLOCK_TARGET, tick_of=None, tick_s: float = 1.25e-9,
                 start_tick: int | None = None):
        if target < 1:
            raise ValueError("block target must be >= 1")
        self.target = target
        self.tick_of = tick_of
        self.tick_s = tick_s
        self._seqs: list[np.ndarray] = []
        self._bits: list[np.ndarray] = []
        self._held = 0
        self._next_id = 0
        self._last_tick = start_tick

    @property
    def held(self) -> int:
        return self._held

    def feed(self, seqs, bits) -> list[KeyBlock]:
        seqs = np.asarray(seqs, dtype=np.int64)
        bits = np.asarray(bits, dtype=np.uint8)
        if len(seqs) != len(bits):
            raise IntegrityError("seq and bit columns differ in length")
        if len(seqs):
            self._seqs.append(seqs)
            self._bits.append(bits)
            self._held += len(seqs)
        out = []
        if self._held < self.target:
            return out
        all_seqs = np.concatenate(self._seqs)
        all_bits = np.concatenate(self._bits)
        pos = 0
        while self._held - pos >= self.target:
            s = all_seqs[pos:pos + self.target]
            out.append(self._make_block(s, all_bits[pos:pos + self.target]))
            pos += self.target
        self._seqs = [all_seqs[pos:]]
        self._bits = [all_bits[pos:]]
        self._held -= pos
        return out

    def _make_block(self, seqs: np.ndarray, bits: np.ndarray) -> KeyBlock:
        wall = 0.0
        if self.tick_of is not None:
            last = int(self.tick_of(int(seqs[-1])))
            start = self._last_tick if self._last_tick is not None else int(self.tick_of(int(seqs[0])))
            wall = (last - start) * self.tick_s
            self._last_tick = last
        block = KeyBlock(self._next_id, bits.copy(), int(seqs[0]), int(seqs[-1]), wall)
        self._next_id += 1
        return block


def partition_blocks(seqs, bits, target: int = DEFAULT_BLOCK_TARGET):
    """Batch form of :class:`BlockAssembler`: returns ``(blocks, held_bits)``."""
    asm = BlockAssembler(target)
    blocks = asm.feed(seqs, bits)
    return blocks, asm.held
