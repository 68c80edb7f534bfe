"""Session state machine and the Alice/Bob protocol loops.

Alice initiates (HELLO), holds the reference key and answers requests.
Bob drives every exchange: he announces bases, discloses the estimation
sample, runs CASCADE, and confirms privacy amplification. Apart from the
HELLO pair, every exchange is one Bob request followed by one Alice
response, so both peers consume the authentication pool in the same order.
"""

from __future__ import annotations

import enum
import logging
import secrets
from dataclasses import dataclass, field

import numpy as np

from .. import drbg
from ..acquisition import RawRecords, SyncStream, alice_records_at, match_coincidences
from ..auth import AuthKeyPool, SessionAuthenticator
from ..cascade import (
    VERIFY_TAG_BITS,
    CascadeResponder,
    pass_permutations,
    run_cascade,
    shuffle_seed,
    verify_seed,
    verify_tag,
)
from ..config import Config
from ..errors import IntegrityError, ProtocolError, QKDError
from ..estimation import (
    Decision,
    abort_threshold,
    apply_estimate,
    estimate_qber,
    make_estimate,
    sample_seed,
    select_sample,
)
from ..keystore import KeyStore
from ..photon_sim import TICK_S, EventStream, Site, decode_detector
from ..privacy_amp import SeedRegistry, ToeplitzSeed, final_length, toeplitz_hash
from ..report import OK, QBER_ABORT, VERIFY_FAILED, BlockReport, SessionReport
from ..sifting import BlockAssembler, KeyBlock, Stage, keep_agreed, sift
from . import codec
from .frames import TAG_LEN, MsgType, ProtocolFrame, decode_frame, encode_frame
from .transport import A_TO_B, B_TO_A, Transcript

log = logging.getLogger(__name__)


class Role(enum.Enum):
    ALICE = "alice"
    BOB = "bob"


class SessionState(enum.Enum):
    HANDSHAKE = "HANDSHAKE"
    BASIS_EXCHANGE = "BASIS_EXCHANGE"
    ESTIMATION = "ESTIMATION"
    CASCADE = "CASCADE"
    VERIFY = "VERIFY"
    PA = "PA"
    CLOSED = "CLOSED"
    ABORTED = "ABORTED"


_S = SessionState
TRANSITIONS = {
    _S.HANDSHAKE: {_S.BASIS_EXCHANGE, _S.ABORTED},
    _S.BASIS_EXCHANGE: {_S.ESTIMATION, _S.CLOSED, _S.ABORTED},
    _S.ESTIMATION: {_S.CASCADE, _S.BASIS_EXCHANGE, _S.ABORTED},
    _S.CASCADE: {_S.VERIFY, _S.ABORTED},
    _S.VERIFY: {_S.PA, _S.BASIS_EXCHANGE, _S.ABORTED},
    _S.PA: {_S.BASIS_EXCHANGE, _S.ABORTED},
    _S.CLOSED: set(),
    _S.ABORTED: set(),
}


class StateMachine:
    def __init__(self):
        self.state = SessionState.HANDSHAKE

    def to(self, new: SessionState) -> None:
        if new not in TRANSITIONS[self.state]:
            raise ProtocolError(f"illegal transition {self.state.value} -> {new.value}")
        self.state = new


class PeerAborted(QKDError):
    """The remote peer sent ABORT."""


@dataclass
class SessionResult:
    role: Role
    state: SessionState
    cause: str
    session_id: int | None
    report: SessionReport
    store: KeyStore
    transcript: Transcript
    final_keys: dict = field(default_factory=dict)
    sifted: dict = field(default_factory=dict)

    @property
    def aborted(self) -> bool:
        return self.state == SessionState.ABORTED

    def key_bits(self) -> np.ndarray:
        parts = [self.final_keys[b] for b in sorted(self.final_keys)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)


class _Peer:
    role: Role

    def __init__(self, config: Config, transport, pool: AuthKeyPool, store: KeyStore | None = None,
                 duration_s: float = 0.0, keep_sifted: bool = False):
        self.config = config
        self.transport = transport
        self.pool = pool
        self.store = store if store is not None else KeyStore()
        self.duration_s = duration_s
        self.keep_sifted = keep_sifted
        self.sm = StateMachine()
        self.auth: SessionAuthenticator | None = None
        self.session_id: int | None = None
        self.send_seq = 0
        self.recv_seq = 0
        self.transcript = Transcript()
        self.rows: list[BlockReport] = []
        self.final_keys: dict[int, np.ndarray] = {}
        self.sifted: dict[int, np.ndarray] = {}
        self._out_dir = A_TO_B if self.role == Role.ALICE else B_TO_A
        self._in_dir = B_TO_A if self.role == Role.ALICE else A_TO_B

    # framing ---------------------------------------------------------------

    def _send(self, msg_type: MsgType, payload: bytes = b"") -> None:
        frame = ProtocolFrame(self.session_id, self.send_seq, msg_type, payload, self.auth.offset)
        signed = encode_frame(frame)[:-TAG_LEN]
        data = signed + self.auth.sign(signed)
        self.transport.send(data)
        self.transcript.add(self._out_dir, data)
        self.send_seq += 1

    def _recv(self, *expected: MsgType) -> ProtocolFrame:
        data = self.transport.recv()
        self.transcript.add(self._in_dir, data)
        frame = decode_frame(data)
        if self.session_id is None:
            self.session_id = frame.session_id
        if frame.session_id != self.session_id:
            raise ProtocolError("frame belongs to another session")
        if frame.seq != self.recv_seq:
            raise ProtocolError(f"frame seq {frame.seq}, expected {self.recv_seq}")
        self.auth.check(data[:-TAG_LEN], frame.auth_offset, frame.tag)
        self.recv_seq += 1
        if frame.msg_type == MsgType.ABORT:
            raise PeerAborted(frame.payload.decode("utf-8", "replace"))
        self._on_authenticated()
        if expected and frame.msg_type not in expected:
            raise ProtocolError(f"unexpected {frame.msg_type.name} in state {self.sm.state.value}")
        return frame

    def _on_authenticated(self) -> None:
        pass

    def _check_hello(self, frame: ProtocolFrame) -> None:
        theirs = codec.decode_hello(frame.payload)
        field_name = codec.hello_mismatch(self.config.hello(), theirs)
        if field_name is not None:
            raise ProtocolError(f"handshake mismatch in {field_name}")

    # bookkeeping -----------------------------------------------------------

    def _row(self, block: KeyBlock, status: str, final_len: int, round_trips: int) -> BlockReport:
        lk = block.leak
        discarded = block.sifted_len - lk.estimation_disclosed - lk.cascade_parities - lk.verify_bits - final_len
        return BlockReport(
            block_id=block.block_id,
            status=status,
            q_est=block.qber_estimated if block.qber_estimated is not None else float("nan"),
            q_real=None,
            acquisition_seconds=block.wall_seconds,
            sifted_len=block.sifted_len,
            est_disclosed=lk.estimation_disclosed,
            cascade_disclosed=lk.cascade_parities,
            verify_disclosed=lk.verify_bits,
            pa_discarded=discarded,
            final_len=final_len,
            rate_bits_per_s=final_len / block.wall_seconds if block.wall_seconds > 0 else 0.0,
            round_trips=round_trips,
        )

    def _commit(self, block: KeyBlock, final: np.ndarray, row: BlockReport, to_auth: bool) -> None:
        block.leak.pa_discarded = row.pa_discarded
        block.bits = final
        block.advance(Stage.FINAL)
        self.store.add_final(block.block_id, final, to_auth=to_auth)
        if to_auth:
            self.pool.replenish(final)
        self.final_keys[block.block_id] = final
        self.rows.append(row)

    def _wants_replenish(self) -> bool:
        return self.config.auth_replenish and self.pool.below_watermark

    def _final_length(self, block: KeyBlock, q_channel: float) -> int:
        leaked = block.leak.cascade_parities + block.leak.verify_bits
        n = len(block.bits)
        return final_length(n, min(leaked, n), q_channel, self.config.pa())

    # driver ----------------------------------------------------------------

    def run(self) -> SessionResult:
        cause = ""
        try:
            self.auth = SessionAuthenticator(self.pool, self.config.tag_bits, self.config.auth_width)
            self._run()
            self.sm.to(SessionState.CLOSED)
        except PeerAborted as exc:
            cause = f"peer aborted: {exc}"
            self.sm.state = SessionState.ABORTED
        except (QKDError, ConnectionError, OSError, ValueError) as exc:
            cause = f"{type(exc).__name__}: {exc}"
            self.sm.state = SessionState.ABORTED
            self._try_send_abort(cause)
        finally:
            try:
                self.transport.close()
            except OSError:
                pass
        if cause:
            log.warning("%s session aborted: %s", self.role.value, cause)
        report = SessionReport(self.rows, self.duration_s, self.sm.state.value, cause)
        if self.pool.below_watermark:
            report.warnings.append(
                f"auth pool below low watermark ({self.pool.available} < {self.pool.low_watermark} bits)")
        return SessionResult(self.role, self.sm.state, cause, self.session_id, report, self.store,
                             self.transcript, self.final_keys, self.sifted)

    def _try_send_abort(self, cause: str) -> None:
        if self.auth is None or self.session_id is None:
            return
        try:
            self._send(MsgType.ABORT, cause.encode("utf-8")[:512])
        except (QKDError, ConnectionError, OSError):
            pass

    def _run(self) -> None:
        raise NotImplementedError


class AlicePeer(_Peer):
    role = Role.ALICE

    def __init__(self, config: Config, transport, pool: AuthKeyPool, events: EventStream, **kw):
        super().__init__(config, transport, pool, **kw)
        self.events = events
        self.assembler = BlockAssembler(config.block_target, tick_of=lambda s: int(events.ticks[s]),
                                        tick_s=TICK_S, start_tick=0)
        self._pending = None
        self._last_seq = -1

    def _new_session_id(self) -> int:
        if self.config.pa_seed_source == "system":
            return int.from_bytes(secrets.token_bytes(8), "little")
        return int.from_bytes(drbg.derive("session-id", self.config.seed, self.pool.consumed)[:8], "little")

    def _pa_seed(self, block_id: int, n: int, m: int) -> np.ndarray:
        if m == 0:
            return np.zeros(0, dtype=np.uint8)
        if self.config.pa_seed_source == "system":
            return ToeplitzSeed.random(n, m).bits
        return drbg.random_bits(n + m - 1, drbg.derive("pa-seed", self.config.seed, self.session_id, block_id))

    def _on_authenticated(self) -> None:
        # Bob sent a further valid frame, so he accepted the last PA_CONFIRM
        if self._pending is not None:
            pending, self._pending = self._pending, None
            self._commit(*pending)

    def _run(self) -> None:
        self.session_id = self._new_session_id()
        self._send(MsgType.HELLO, codec.encode_hello(self.config.hello()))
        self._check_hello(self._recv(MsgType.HELLO))
        self.sm.to(SessionState.BASIS_EXCHANGE)
        ready: list[KeyBlock] = []
        while True:
            if ready:
                self._serve_block(ready.pop(0))
                continue
            frame = self._recv(MsgType.BASIS_ANNOUNCE, MsgType.CLOSE)
            if frame.msg_type == MsgType.CLOSE:
                self._send(MsgType.CLOSE)
                return
            seqs, bases = codec.decode_basis_announce(frame.payload)
            if len(seqs) and seqs[0] <= self._last_seq:
                raise IntegrityError("announced seqs are not ascending")
            if len(seqs):
                self._last_seq = int(seqs[-1])
            records = alice_records_at(self.events, seqs)
            kept, bits, agree = sift(records, (seqs, bases))
            self._send(MsgType.SIFT_INDICES, codec.encode_sift_indices(agree))
            ready.extend(self.assembler.feed(kept, bits))

    def _serve_block(self, block: KeyBlock) -> None:
        cfg, sid, bid = self.config, self.session_id, block.block_id
        rt0 = self.recv_seq
        self.sm.to(SessionState.ESTIMATION)
        if self.keep_sifted:
            self.sifted[bid] = block.bits.copy()
        got_bid, sample = codec.decode_est_sample(self._recv(MsgType.EST_SAMPLE).payload)
        if got_bid != bid:
            raise IntegrityError(f"EST_SAMPLE for block {got_bid}, expected {bid}")
        idx = select_sample(len(block.bits), cfg.fraction, sample_seed(sid, bid))
        est = estimate_qber(block.bits[idx], sample, cfg.q_device)
        proceed = abort_threshold(est.q_est, cfg.q_max) == Decision.PROCEED
        apply_estimate(block, idx, est)
        self._send(MsgType.EST_RESULT, codec.encode_est_result(bid, est.sample_size, est.mismatches, proceed))
        if not proceed:
            self.rows.append(self._row(block, QBER_ABORT, 0, self.recv_seq - rt0))
            self.sm.to(SessionState.BASIS_EXCHANGE)
            return

        self.sm.to(SessionState.CASCADE)
        n = len(block.bits)
        sizes = cfg.cascade().block_sizes(est.q_est, n)
        responder = CascadeResponder(block.bits, pass_permutations(n, sid, bid, len(sizes)))
        next_pass = 0
        while True:
            frame = self._recv(MsgType.CAS_SHUFFLE_COMMIT, MsgType.CAS_PARITY_REQ, MsgType.CAS_VERIFY)
            if frame.msg_type == MsgType.CAS_SHUFFLE_COMMIT:
                got_bid, p, k, digest = codec.decode_shuffle_commit(frame.payload)
                if got_bid != bid or p != next_pass or p >= len(sizes) or k != sizes[p]:
                    raise IntegrityError("CASCADE pass commitment does not match local parameters")
                if digest != codec.shuffle_digest(shuffle_seed(sid, bid, p)):
                    raise IntegrityError("CASCADE shuffle commitment mismatch")
                next_pass += 1
                self._send(MsgType.CAS_PARITY_RSP, codec.encode_parity_rsp(bid, responder.top_level(p, k)))
            elif frame.msg_type == MsgType.CAS_PARITY_REQ:
                got_bid, queries = codec.decode_parity_req(frame.payload)
                if got_bid != bid or any(q[0] >= next_pass for q in queries):
                    raise IntegrityError("parity request outside committed passes")
                self._send(MsgType.CAS_PARITY_RSP, codec.encode_parity_rsp(bid, responder.ask(queries)))
            else:
                break

        self.sm.to(SessionState.VERIFY)
        got_bid, count, status, tag = codec.decode_verify(frame.payload)
        if got_bid != bid or status != codec.VERIFY_CLAIM:
            raise IntegrityError("malformed verification claim")
        if next_pass != len(sizes):
            raise IntegrityError("verification before all CASCADE passes")
        if count != responder.disclosed:
            raise IntegrityError(f"parity count mismatch: peer {count}, local {responder.disclosed}")
        block.leak.cascade_parities += responder.disclosed
        block.advance(Stage.CORRECTED)
        block.leak.verify_bits += VERIFY_TAG_BITS
        mine = np.packbits(verify_tag(block.bits, verify_seed(sid, bid))).tobytes()
        if mine != tag:
            self._send(MsgType.CAS_VERIFY, codec.encode_verify(bid, responder.disclosed, codec.VERIFY_FAILED))
            self.rows.append(self._row(block, VERIFY_FAILED, 0, self.recv_seq - rt0))
            self.sm.to(SessionState.BASIS_EXCHANGE)
            return

        self.sm.to(SessionState.PA)
        m = self._final_length(block, est.q_channel)
        seed = self._pa_seed(bid, n, m)
        self._send(MsgType.PA_SEED, codec.encode_pa_seed(bid, n, m, seed))
        got_bid, got_m, digest = codec.decode_pa_confirm(self._recv(MsgType.PA_CONFIRM).payload)
        expected = codec.seed_digest(bid, m, seed)
        if got_bid != bid or got_m != m or digest != expected:
            raise IntegrityError("privacy amplification confirmation mismatch")
        final = toeplitz_hash(block.bits, seed, m) if m else np.zeros(0, dtype=np.uint8)
        self._send(MsgType.PA_CONFIRM, codec.encode_pa_confirm(bid, m, expected))
        row = self._row(block, OK, m, self.recv_seq - rt0)
        self._pending = (block, final, row, self._wants_replenish())
        self.sm.to(SessionState.BASIS_EXCHANGE)


class _FrameParity:
    """CASCADE parity transport over authenticated frames (Bob side)."""

    def __init__(self, peer: "BobPeer", block_id: int):
        self.peer = peer
        self.block_id = block_id

    def top_level(self, pass_index: int, block_size: int) -> np.ndarray:
        digest = codec.shuffle_digest(shuffle_seed(self.peer.session_id, self.block_id, pass_index))
        self.peer._send(MsgType.CAS_SHUFFLE_COMMIT,
                        codec.encode_shuffle_commit(self.block_id, pass_index, block_size, digest))
        return self._answer()

    def ask(self, queries) -> list[int]:
        self.peer._send(MsgType.CAS_PARITY_REQ, codec.encode_parity_req(self.block_id, queries))
        answer = self._answer()
        if len(answer) != len(queries):
            raise IntegrityError("parity response length mismatch")
        return answer.tolist()

    def _answer(self) -> np.ndarray:
        got_bid, parities = codec.decode_parity_rsp(self.peer._recv(MsgType.CAS_PARITY_RSP).payload)
        if got_bid != self.block_id:
            raise IntegrityError("parity response for another block")
        return parities


class BobPeer(_Peer):
    role = Role.BOB

    def __init__(self, config: Config, transport, pool: AuthKeyPool, events: EventStream, syncs: SyncStream, **kw):
        super().__init__(config, transport, pool, **kw)
        self.events = events
        self.syncs = syncs
        delay = config.delay_ticks
        self.assembler = BlockAssembler(config.block_target, tick_of=lambda s: int(syncs.ticks[s]) - delay,
                                        tick_s=TICK_S, start_tick=0)
        self.seed_registry = SeedRegistry()

    def _run(self) -> None:
        cfg = self.config
        self._check_hello(self._recv(MsgType.HELLO))
        self._send(MsgType.HELLO, codec.encode_hello(cfg.hello()))
        self.sm.to(SessionState.BASIS_EXCHANGE)

        seqs, ev_idx = match_coincidences(self.syncs, self.events, cfg.window_ticks)
        bases, bits = decode_detector(self.events.detectors[ev_idx])
        records = RawRecords(Site.BOB, seqs, bases, bits)
        step = cfg.announce_chunk
        for start in range(0, len(records), step):
            chunk = records.take(slice(start, start + step))
            self._send(MsgType.BASIS_ANNOUNCE, codec.encode_basis_announce(chunk.seqs, chunk.bases))
            agree = codec.decode_sift_indices(self._recv(MsgType.SIFT_INDICES).payload)
            kept, sifted = keep_agreed(chunk, agree, invert=True)
            for block in self.assembler.feed(kept, sifted):
                self._process_block(block)
        self._send(MsgType.CLOSE)
        self._recv(MsgType.CLOSE)

    def _process_block(self, block: KeyBlock) -> None:
        cfg, sid, bid = self.config, self.session_id, block.block_id
        rt0 = self.send_seq
        self.sm.to(SessionState.ESTIMATION)
        if self.keep_sifted:
            self.sifted[bid] = block.bits.copy()
        idx = select_sample(len(block.bits), cfg.fraction, sample_seed(sid, bid))
        self._send(MsgType.EST_SAMPLE, codec.encode_est_sample(bid, block.bits[idx]))
        got_bid, size, mismatches, proceed = codec.decode_est_result(self._recv(MsgType.EST_RESULT).payload)
        if got_bid != bid or size != len(idx):
            raise IntegrityError("estimation result does not match the disclosed sample")
        est = make_estimate(size, mismatches, cfg.q_device)
        if (abort_threshold(est.q_est, cfg.q_max) == Decision.PROCEED) != proceed:
            raise IntegrityError("peer disagrees on the abort decision")
        apply_estimate(block, idx, est)
        if not proceed:
            self.rows.append(self._row(block, QBER_ABORT, 0, self.send_seq - rt0))
            self.sm.to(SessionState.BASIS_EXCHANGE)
            return

        self.sm.to(SessionState.CASCADE)
        n = len(block.bits)
        perms = pass_permutations(n, sid, bid, cfg.cascade_passes)
        result = run_cascade(block, est.q_est, _FrameParity(self, bid), perms, cfg.cascade())

        self.sm.to(SessionState.VERIFY)
        block.leak.verify_bits += VERIFY_TAG_BITS
        tag = np.packbits(verify_tag(block.bits, verify_seed(sid, bid))).tobytes()
        self._send(MsgType.CAS_VERIFY, codec.encode_verify(bid, result.parities, codec.VERIFY_CLAIM, tag))
        frame = self._recv(MsgType.PA_SEED, MsgType.CAS_VERIFY)
        if frame.msg_type == MsgType.CAS_VERIFY:
            got_bid, _, status, _ = codec.decode_verify(frame.payload)
            if got_bid != bid or status != codec.VERIFY_FAILED:
                raise IntegrityError("malformed verification reply")
            self.rows.append(self._row(block, VERIFY_FAILED, 0, self.send_seq - rt0))
            self.sm.to(SessionState.BASIS_EXCHANGE)
            return

        self.sm.to(SessionState.PA)
        got_bid, got_n, m, seed = codec.decode_pa_seed(frame.payload)
        expected_m = self._final_length(block, est.q_channel)
        if got_bid != bid or got_n != n or m != expected_m:
            raise IntegrityError(f"privacy amplification length mismatch (peer m={m}, local m={expected_m})")
        if len(seed) != (n + m - 1 if m else 0):
            raise IntegrityError("privacy amplification seed has the wrong length")
        if m:
            self.seed_registry.check(seed)
        final = toeplitz_hash(block.bits, seed, m) if m else np.zeros(0, dtype=np.uint8)
        digest = codec.seed_digest(bid, m, seed)
        self._send(MsgType.PA_CONFIRM, codec.encode_pa_confirm(bid, m, digest))
        got = codec.decode_pa_confirm(self._recv(MsgType.PA_CONFIRM).payload)
        if got != (bid, m, digest):
            raise IntegrityError("privacy amplification confirmation mismatch")
        to_auth = self._wants_replenish()
        self._commit(block, final, self._row(block, OK, m, self.send_seq - rt0), to_auth)
        self.sm.to(SessionState.BASIS_EXCHANGE)


def run_session(role: Role | str, config: Config, transport, pool: AuthKeyPool, events: EventStream,
                syncs: SyncStream | None = None, **kw) -> SessionResult:
    role = Role(role)
    if role == Role.ALICE:
        return AlicePeer(config, transport, pool, events, **kw).run()
    if syncs is None:
        raise ValueError("Bob needs the sync pulse stream")
    return BobPeer(config, transport, pool, events, syncs, **kw).run()

