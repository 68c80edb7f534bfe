import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entqkd.errors import FrameError
from entqkd.protocol import codec
from entqkd.protocol.frames import (
    HEADER_LEN,
    MAX_PAYLOAD,
    MsgType,
    ProtocolFrame,
    decode_frame,
    encode_frame,
    frame_length,
    parse_header,
)

GOLDEN_PING = bytes.fromhex(
    "514b4431" "01" "0100000000000000" "0200000000000000" "00" "02000000" "6162" "0300000000000000" + "aa" * 8
)


def test_golden_frame_bytes():
    frame = ProtocolFrame(1, 2, MsgType.PING, b"ab", 3, b"\xaa" * 8)
    assert encode_frame(frame) == GOLDEN_PING
    assert decode_frame(GOLDEN_PING) == frame
    assert HEADER_LEN == 26
    assert frame_length(GOLDEN_PING[:HEADER_LEN]) == len(GOLDEN_PING)


def test_message_type_registry():
    assert [m.value for m in MsgType] == list(range(14))
    assert MsgType.ABORT == 12 and MsgType.CLOSE == 13


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.sampled_from(list(MsgType)),
       st.binary(max_size=300), st.integers(0, 2**64 - 1), st.binary(min_size=8, max_size=8))
def test_frame_roundtrip(sid, seq, mt, payload, off, tag):
    f = ProtocolFrame(sid, seq, mt, payload, off, tag)
    assert decode_frame(encode_frame(f)) == f


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"XKD1" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x02" + b[5:], "version"),
    (lambda b: b[:21] + b"\x63" + b[22:], "msg_type"),
    (lambda b: b[:-1], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
    (lambda b: b[:10], "truncated"),
])
def test_malformed_frames(mutate, msg):
    with pytest.raises(FrameError, match=msg):
        decode_frame(mutate(GOLDEN_PING))


def test_oversized_length_rejected_before_payload():
    header = bytearray(GOLDEN_PING[:HEADER_LEN])
    struct.pack_into("<I", header, 22, MAX_PAYLOAD + 1)
    with pytest.raises(FrameError, match="exceeds"):
        parse_header(bytes(header))
    with pytest.raises(FrameError):
        encode_frame(ProtocolFrame(0, 0, MsgType.PING, bytes(MAX_PAYLOAD + 1)))


@given(st.sets(st.integers(0, 2000)), st.integers(0, 50))
@settings(max_examples=150)
def test_index_set_roundtrip(idx, extra):
    idx = sorted(idx)
    universe = (idx[-1] + 1 if idx else 0) + extra
    data = codec.encode_index_set(idx, universe)
    got, uni, used = codec.decode_index_set(data)
    assert got.tolist() == idx and uni == universe and used == len(data)


def test_index_set_picks_compact_form():
    dense = codec.encode_index_set(range(1000), 1000)
    assert dense[0] == 1 and len(dense) == 5 + 4 + 8
    sparse = codec.encode_index_set(range(0, 1000, 2), 1000)
    assert sparse[0] == 0 and len(sparse) == 5 + 125
    with pytest.raises(ValueError):
        codec.encode_index_set([3, 1], 10)


def test_basis_announce_roundtrip():
    seqs = np.array([100, 101, 105, 300])
    bases = np.array([0, 1, 1, 0])
    got_s, got_b = codec.decode_basis_announce(codec.encode_basis_announce(seqs, bases))
    assert got_s.tolist() == seqs.tolist() and got_b.tolist() == bases.tolist()


def test_sift_mask_roundtrip():
    mask = np.array([True, False, False, True, True])
    assert codec.decode_sift_indices(codec.encode_sift_indices(mask)).tolist() == mask.tolist()


def test_block_messages_roundtrip():
    bits = np.array([1, 0, 1, 1, 0, 0, 1], np.uint8)
    bid, got = codec.decode_est_sample(codec.encode_est_sample(7, bits))
    assert bid == 7 and got.tolist() == bits.tolist()
    assert codec.decode_est_result(codec.encode_est_result(7, 625, 40, True)) == (7, 625, 40, True)
    d = codec.shuffle_digest(b"s")
    assert codec.decode_shuffle_commit(codec.encode_shuffle_commit(7, 2, 48, d)) == (7, 2, 48, d)
    queries = [(0, 0, 6), (3, 1800, 75)]
    bid, q = codec.decode_parity_req(codec.encode_parity_req(7, queries))
    assert bid == 7 and [tuple(x) for x in q] == queries
    bid, par = codec.decode_parity_rsp(codec.encode_parity_rsp(7, [1, 0, 1]))
    assert par.tolist() == [1, 0, 1]
    assert codec.decode_verify(codec.encode_verify(7, 700, codec.VERIFY_CLAIM, b"12345678")) == (
        7, 700, codec.VERIFY_CLAIM, b"12345678")
    bid, n, m, seed = codec.decode_pa_seed(codec.encode_pa_seed(7, 10, 3, np.ones(12, np.uint8)))
    assert (bid, n, m, len(seed)) == (7, 10, 3, 12)
    dg = codec.seed_digest(7, 3, seed)
    assert codec.decode_pa_confirm(codec.encode_pa_confirm(7, 3, dg)) == (7, 3, dg)


def test_hello_mismatch_names_field():
    from entqkd.config import Config

    a = Config().hello()
    assert codec.decode_hello(codec.encode_hello(a)) == a
    assert codec.hello_mismatch(a, a) is None
    assert codec.hello_mismatch(a, Config(fraction=0.3).hello()) == "fraction"
    with pytest.raises(FrameError):
        codec.decode_hello(b"\x00" * 3)


def test_truncated_payloads_raise_frame_error():
    for fn in (codec.decode_est_sample, codec.decode_basis_announce, codec.decode_parity_rsp):
        with pytest.raises(FrameError):
            fn(b"\x01")
