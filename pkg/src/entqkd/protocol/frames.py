"""ProtocolFrame wire format.

Layout (little-endian)::

    magic "QKD1" | version u8 | session_id u64 | seq u64 | msg_type u8 |
    payload_len u32 | payload | auth_offset u64 | tag 8 bytes

The tag covers every byte before it.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..errors import FrameError

MAGIC = b"QKD1"
VERSION = 1
MAX_PAYLOAD = 1 << 20
TAG_LEN = 8

HEADER = struct.Struct("<4sBQQBI")
TRAILER = struct.Struct("<Q8s")
HEADER_LEN = HEADER.size  # 26
TRAILER_LEN = TRAILER.size  # 16


class MsgType(enum.IntEnum):
    PING = 0
    HELLO = 1
    BASIS_ANNOUNCE = 2
    SIFT_INDICES = 3
    EST_SAMPLE = 4
    EST_RESULT = 5
    CAS_SHUFFLE_COMMIT = 6
    CAS_PARITY_REQ = 7
    CAS_PARITY_RSP = 8
    CAS_VERIFY = 9
    PA_SEED = 10
    PA_CONFIRM = 11
    ABORT = 12
    CLOSE = 13


@dataclass(frozen=True)
class ProtocolFrame:
    session_id: int
    seq: int
    msg_type: MsgType
    payload: bytes = b""
    auth_offset: int = 0
    tag: bytes = bytes(TAG_LEN)
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def signed_part(self) -> bytes:
        """Bytes the tag authenticates."""
        return encode_frame(self)[:-TAG_LEN]


def encode_frame(frame: ProtocolFrame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError(f"payload of {len(frame.payload)} bytes exceeds limit")
    if len(frame.tag) != TAG_LEN:
        raise FrameError("tag must be 8 bytes")
    if not 0 <= frame.version <= 0xFF:
        raise FrameError("version out of range")
    return (
        HEADER.pack(MAGIC, frame.version, frame.session_id, frame.seq, int(frame.msg_type), len(frame.payload))
        + frame.payload
        + TRAILER.pack(frame.auth_offset, frame.tag)
    )


def parse_header(data: bytes) -> tuple[int, int, int, int, int]:
    """Validate a header; returns (version, session_id, seq, msg_type, payload_len)."""
    if len(data) < HEADER_LEN:
        raise FrameError("truncated frame header")
    magic, version, session_id, seq, msg_type, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FrameError("bad frame magic")
    if version != VERSION:
        raise FrameError(f"unknown protocol version {version}")
    if payload_len > MAX_PAYLOAD:
        raise FrameError(f"payload length {payload_len} exceeds limit")
    try:
        MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown msg_type {msg_type}") from None
    return version, session_id, seq, msg_type, payload_len


def decode_frame(data: bytes) -> ProtocolFrame:
    version, session_id, seq, msg_type, payload_len = parse_header(data)
    total = HEADER_LEN + payload_len + TRAILER_LEN
    if len(data) < total:
        raise FrameError("truncated frame")
    if len(data) > total:
        raise FrameError("trailing bytes after frame")
    payload = bytes(data[HEADER_LEN:HEADER_LEN + payload_len])
    auth_offset, tag = TRAILER.unpack_from(data, HEADER_LEN + payload_len)
    return ProtocolFrame(session_id, seq, MsgType(msg_type), payload, auth_offset, tag, version)


def frame_length(header: bytes) -> int:
    """Full frame size implied by a validated header."""
    return HEADER_LEN + parse_header(header)[4] + TRAILER_LEN
