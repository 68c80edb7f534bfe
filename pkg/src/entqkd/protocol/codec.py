"""Payload encodings for each message type."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields

import numpy as np

from ..errors import FrameError

_BITMAP, _RUNS = 0, 1


def _need(data: bytes, n: int, what: str) -> None:
    if len(data) < n:
        raise FrameError(f"truncated {what}")


def encode_index_set(indices, universe: int) -> bytes:
    """Sorted distinct indices in [0, universe); picks the smaller of a
    bitmap or (start, len) runs."""
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) and (idx[0] < 0 or idx[-1] >= universe or np.any(np.diff(idx) <= 0)):
        raise ValueError("index set must be sorted, distinct and inside the universe")
    if len(idx):
        breaks = np.flatnonzero(np.diff(idx) != 1) + 1
        starts = idx[np.r_[0, breaks]]
        ends = idx[np.r_[breaks - 1, len(idx) - 1]]
        runs = np.stack([starts, ends - starts + 1], axis=1)
    else:
        runs = np.zeros((0, 2), dtype=np.int64)
    bitmap_len = (universe + 7) // 8
    runs_len = 4 + 8 * len(runs)
    head = struct.pack("<BI", _RUNS if runs_len < bitmap_len else _BITMAP, universe)
    if runs_len < bitmap_len:
        return head + struct.pack("<I", len(runs)) + runs.astype("<u4").tobytes()
    mask = np.zeros(universe, dtype=np.uint8)
    mask[idx] = 1
    return head + np.packbits(mask).tobytes()


def decode_index_set(data: bytes, offset: int = 0) -> tuple[np.ndarray, int, int]:
    """Returns (indices, universe, bytes consumed)."""
    _need(data, offset + 5, "index set")
    kind, universe = struct.unpack_from("<BI", data, offset)
    pos = offset + 5
    if kind == _BITMAP:
        nbytes = (universe + 7) // 8
        _need(data, pos + nbytes, "index bitmap")
        mask = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=pos), count=universe)
        return np.flatnonzero(mask).astype(np.int64), universe, pos + nbytes - offset
    if kind == _RUNS:
        _need(data, pos + 4, "run count")
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        _need(data, pos + 8 * count, "index runs")
        runs = np.frombuffer(data, dtype="<u4", count=2 * count, offset=pos).astype(np.int64).reshape(-1, 2)
        pos += 8 * count
        parts = [np.arange(s, s + l) for s, l in runs.tolist()]
        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        if len(idx) and (idx[-1] >= universe or np.any(np.diff(idx) <= 0)):
            raise FrameError("malformed index runs")
        return idx, universe, pos - offset
    raise FrameError(f"unknown index set encoding {kind}")


def pack_bits(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    return struct.pack("<I", len(bits)) + np.packbits(bits).tobytes()


def unpack_bits(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    _need(data, offset + 4, "bit string length")
    (n,) = struct.unpack_from("<I", data, offset)
    nbytes = (n + 7) // 8
    _need(data, offset + 4 + nbytes, "bit string")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=offset + 4), count=n)
    return bits, 4 + nbytes


# HELLO ---------------------------------------------------------------------

@dataclass(frozen=True)
class HelloParams:
    version: int
    block_target: int
    fraction: float
    cascade_passes: int
    k1_factor: float
    q_device: float
    safety_bits: int
    q_max: float
    window_ticks: int
    tag_bits: int
    auth_width: int


_HELLO = struct.Struct("<BIdBddIdIBI")


def encode_hello(p: HelloParams) -> bytes:
    return _HELLO.pack(*(getattr(p, f.name) for f in fields(HelloParams)))


def decode_hello(data: bytes) -> HelloParams:
    if len(data) != _HELLO.size:
        raise FrameError("malformed HELLO payload")
    return HelloParams(*_HELLO.unpack(data))


def hello_mismatch(a: HelloParams, b: HelloParams) -> str | None:
    for f in fields(HelloParams):
        if getattr(a, f.name) != getattr(b, f.name):
            return f.name
    return None


# sifting -------------------------------------------------------------------

def encode_basis_announce(seqs, bases) -> bytes:
    seqs = np.asarray(seqs, dtype=np.int64)
    base = int(seqs[0]) if len(seqs) else 0
    universe = int(seqs[-1]) - base + 1 if len(seqs) else 0
    return struct.pack("<Q", base) + encode_index_set(seqs - base, universe) + pack_bits(bases)


def decode_basis_announce(data: bytes):
    _need(data, 8, "announce base")
    (base,) = struct.unpack_from("<Q", data)
    idx, _, used = decode_index_set(data, 8)
    bases, _ = unpack_bits(data, 8 + used)
    if len(bases) != len(idx):
        raise FrameError("basis count does not match seq count")
    return idx + base, bases


def encode_sift_indices(agree_mask) -> bytes:
    agree_mask = np.asarray(agree_mask, dtype=bool)
    return encode_index_set(np.flatnonzero(agree_mask), len(agree_mask))


def decode_sift_indices(data: bytes) -> np.ndarray:
    idx, universe, _ = decode_index_set(data)
    mask = np.zeros(universe, dtype=bool)
    mask[idx] = True
    return mask


# estimation ----------------------------------------------------------------

def encode_est_sample(block_id: int, bits) -> bytes:
    return struct.pack("<I", block_id) + pack_bits(bits)


def decode_est_sample(data: bytes):
    _need(data, 4, "EST_SAMPLE")
    (block_id,) = struct.unpack_from("<I", data)
    bits, _ = unpack_bits(data, 4)
    return block_id, bits


_EST_RESULT = struct.Struct("<IIIB")


def encode_est_result(block_id: int, sample_size: int, mismatches: int, proceed: bool) -> bytes:
    return _EST_RESULT.pack(block_id, sample_size, mismatches, int(proceed))


def decode_est_result(data: bytes):
    if len(data) != _EST_RESULT.size:
        raise FrameError("malformed EST_RESULT")
    block_id, size, mism, proceed = _EST_RESULT.unpack(data)
    return block_id, size, mism, bool(proceed)


# cascade -------------------------------------------------------------------

_COMMIT = struct.Struct("<IBI8s")


def shuffle_digest(seed: bytes) -> bytes:
    return hashlib.sha256(b"commit" + seed).digest()[:8]


def encode_shuffle_commit(block_id: int, pass_index: int, block_size: int, digest: bytes) -> bytes:
    return _COMMIT.pack(block_id, pass_index, block_size, digest)


def decode_shuffle_commit(data: bytes):
    if len(data) != _COMMIT.size:
        raise FrameError("malformed CAS_SHUFFLE_COMMIT")
    return _COMMIT.unpack(data)


_QUERY = np.dtype([("pass", "u1"), ("start", "<u4"), ("length", "<u4")])


def encode_parity_req(block_id: int, queries) -> bytes:
    arr = np.array([tuple(q) for q in queries], dtype=_QUERY)
    return struct.pack("<II", block_id, len(arr)) + arr.tobytes()


def decode_parity_req(data: bytes):
    _need(data, 8, "CAS_PARITY_REQ")
    block_id, count = struct.unpack_from("<II", data)
    if len(data) != 8 + count * _QUERY.itemsize:
        raise FrameError("malformed CAS_PARITY_REQ")
    arr = np.frombuffer(data, dtype=_QUERY, count=count, offset=8)
    return block_id, [(int(p), int(s), int(l)) for p, s, l in arr.tolist()]


def encode_parity_rsp(block_id: int, parities) -> bytes:
    return struct.pack("<I", block_id) + pack_bits(parities)


def decode_parity_rsp(data: bytes):
    _need(data, 4, "CAS_PARITY_RSP")
    (block_id,) = struct.unpack_from("<I", data)
    bits, _ = unpack_bits(data, 4)
    return block_id, bits


VERIFY_CLAIM, VERIFY_OK, VERIFY_FAILED = 0, 1, 2
_VERIFY = struct.Struct("<IIB8s")


def encode_verify(block_id: int, parity_count: int, status: int, tag: bytes = bytes(8)) -> bytes:
    return _VERIFY.pack(block_id, parity_count, status, tag)


def decode_verify(data: bytes):
    if len(data) != _VERIFY.size:
        raise FrameError("malformed CAS_VERIFY")
    return _VERIFY.unpack(data)


# privacy amplification ------------------------------------------------------

def encode_pa_seed(block_id: int, n: int, m: int, seed_bits) -> bytes:
    return struct.pack("<III", block_id, n, m) + pack_bits(seed_bits)


def decode_pa_seed(data: bytes):
    _need(data, 12, "PA_SEED")
    block_id, n, m = struct.unpack_from("<III", data)
    bits, used = unpack_bits(data, 12)
    if 12 + used != len(data):
        raise FrameError("malformed PA_SEED")
    return block_id, n, m, bits


def seed_digest(block_id: int, m: int, seed_bits) -> bytes:
    h = hashlib.sha256(struct.pack("<II", block_id, m))
    h.update(np.packbits(np.asarray(seed_bits, dtype=np.uint8)).tobytes())
    return h.digest()[:8]


_CONFIRM = struct.Struct("<II8s")


def encode_pa_confirm(block_id: int, m: int, digest: bytes) -> bytes:
    return _CONFIRM.pack(block_id, m, digest)


def decode_pa_confirm(data: bytes):
    if len(data) != _CONFIRM.size:
        raise FrameError("malformed PA_CONFIRM")
    return _CONFIRM.unpack(data)
