"""QBER estimation from a publicly disclosed sample of each block."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import drbg
from .errors import IntegrityError
from .sifting import KeyBlock, Stage

DEFAULT_FRACTION = 0.25
DEFAULT_Q_DEVICE = 0.037  # detection modules 2.5% + state preparation 1.2%
DEFAULT_Q_MAX = 0.11


class Decision(enum.Enum):
    PROCEED = "proceed"
    ABORT = "abort"


@dataclass(frozen=True)
class QberEstimate:
    sample_size: int
    mismatches: int
    q_est: float
    q_channel: float


def sample_size(block_len: int, fraction: float = DEFAULT_FRACTION) -> int:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    # round half up, identical on every platform
    return int(np.floor(fraction * block_len + 0.5))


def sample_seed(session_id: int, block_id: int) -> bytes:
    return drbg.derive("est-sample", session_id, block_id)


def select_sample(block_len: int, fraction: float = DEFAULT_FRACTION, seed: bytes = b"") -> np.ndarray:
    k = sample_size(block_len, fraction)
    return drbg.sample_indices(block_len, k, seed)


def make_estimate(sample_size: int, mismatches: int, q_device: float = DEFAULT_Q_DEVICE) -> QberEstimate:
    if sample_size < 1:
        raise IntegrityError("empty estimation sample")
    q = mismatches / sample_size
    return QberEstimate(sample_size, mismatches, q, max(q - q_device, 0.0))


def estimate_qber(local_sample, remote_sample, q_device: float = DEFAULT_Q_DEVICE) -> QberEstimate:
    local_sample = np.asarray(local_sample, dtype=np.uint8)
    remote_sample = np.asarray(remote_sample, dtype=np.uint8)
    if len(local_sample) != len(remote_sample):
        raise IntegrityError("estimation samples differ in length")
    return make_estimate(len(local_sample), int(np.count_nonzero(local_sample != remote_sample)), q_device)


def apply_estimate(block: KeyBlock, sample: np.ndarray, estimate: QberEstimate) -> KeyBlock:
    """Drop the disclosed positions and move the block to ESTIMATED."""
    keep = np.ones(len(block.bits), dtype=bool)
    keep[sample] = False
    block.bits = block.bits[keep]
    block.leak.estimation_disclosed += len(sample)
    block.qber_estimated = estimate.q_est
    block.advance(Stage.ESTIMATED)
    return block


def abort_threshold(q_est: float, q_max: float = DEFAULT_Q_MAX) -> Decision:
    return Decision.ABORT if q_est > q_max else Decision.PROCEED
