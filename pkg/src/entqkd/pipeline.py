"""End-to-end runs: in-process loopback and TCP peers, plus session directories."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .acquisition import SyncStream, emit_sync
from .auth import AuthKeyPool
from .config import Config
from .keystore import KeyStore
from .photon_sim import EventStream, simulate_run
from .protocol.session import AlicePeer, BobPeer, SessionResult
from .protocol.transport import QueueTransport, connect, listen, parse_addr
from .report import SessionReport

log = logging.getLogger(__name__)

REPORT_CSV = "report.csv"
REPORT_PNG = "report.png"


def pool_file(session_dir, role: str) -> Path:
    return Path(session_dir) / f"pool_{role}.bin"


def keys_file(session_dir, role: str) -> Path:
    return Path(session_dir) / f"keys_{role}.bin"


def transcript_file(session_dir, role: str) -> Path:
    return Path(session_dir) / f"transcript_{role}.bin"


def open_pool(config: Config, role: str, session_dir=None) -> AuthKeyPool:
    """The site's auth pool: resumed from the session directory, else
    copied from ``auth_pool_path``, else expanded from ``auth_pool_seed``."""
    if session_dir is not None:
        Path(session_dir).mkdir(parents=True, exist_ok=True)
    kw = dict(low_watermark=config.auth_low_watermark)
    path = pool_file(session_dir, role) if session_dir is not None else None
    if path is not None and path.exists():
        return AuthKeyPool.load(path, **kw)
    if config.auth_pool_path:
        pool = AuthKeyPool.load(config.auth_pool_path, **kw)
        pool.path = None
    else:
        pool = AuthKeyPool.bootstrap(config.auth_pool_seed, config.auth_pool_bits, **kw)
    if path is not None:
        pool.save(path)
    return pool


def open_store(session_dir, role: str) -> KeyStore:
    if session_dir is not None and keys_file(session_dir, role).exists():
        return KeyStore.load(keys_file(session_dir, role))
    return KeyStore()


def generate_streams(config: Config, duration_s: float, seed: int):
    alice, bob = simulate_run(config.source(), config.channel(), duration_s, seed)
    return alice, bob, emit_sync(alice, config.delay_ticks)


@dataclass
class SimulationResult:
    alice: SessionResult
    bob: SessionResult
    report: SessionReport
    alice_events: EventStream
    bob_events: EventStream

    @property
    def keys_agree(self) -> bool:
        return np.array_equal(self.alice.key_bits(), self.bob.key_bits())


def merge_reports(alice: SessionResult, bob: SessionResult) -> SessionReport:
    """Bob's rows with the ground-truth QBER filled in from both sifted keys."""
    rows = []
    for row in bob.report.rows:
        a, b = alice.sifted.get(row.block_id), bob.sifted.get(row.block_id)
        q_real = float(np.mean(a != b)) if a is not None and b is not None else None
        rows.append(replace(row, q_real=q_real))
    report = SessionReport(rows, bob.report.duration_s, bob.report.state, bob.report.abort_cause,
                           list(bob.report.warnings))
    if alice.aborted and not bob.aborted:
        report.state, report.abort_cause = alice.state.value, alice.cause
    return report


def simulate(config: Config, duration_s: float | None = None, seed: int | None = None,
             session_dir=None, render: bool = True) -> SimulationResult:
    """Run Alice and Bob in-process over a loopback channel."""
    duration_s = config.duration_s if duration_s is None else duration_s
    seed = config.seed if seed is None else seed
    config = config.with_(seed=seed, duration_s=duration_s)
    if session_dir is not None:
        Path(session_dir).mkdir(parents=True, exist_ok=True)
    alice_ev, bob_ev, syncs = generate_streams(config, duration_s, seed)

    ta, tb = QueueTransport.pair(config.timeout_s)
    common = dict(duration_s=duration_s, keep_sifted=True)
    alice = AlicePeer(config, ta, open_pool(config, "alice", session_dir), alice_ev,
                      store=open_store(session_dir, "alice"), **common)
    bob = BobPeer(config, tb, open_pool(config, "bob", session_dir), bob_ev, syncs,
                  store=open_store(session_dir, "bob"), **common)
    out = {}
    thread = threading.Thread(target=lambda: out.setdefault("alice", alice.run()), name="alice")
    thread.start()
    bob_result = bob.run()
    thread.join()
    result = SimulationResult(out["alice"], bob_result, merge_reports(out["alice"], bob_result), alice_ev, bob_ev)
    if session_dir is not None:
        write_session(session_dir, result.report, [result.alice, result.bob], render=render)
    return result


def write_session(session_dir, report: SessionReport, results, render: bool = True) -> None:
    if session_dir is None:
        return
    session_dir = Path(session_dir)
    session_dir.mkdir(parents=True, exist_ok=True)
    report.write(session_dir / REPORT_CSV)
    for res in results:
        role = res.role.value
        res.transcript.save(transcript_file(session_dir, role))
        res.store.save(keys_file(session_dir, role))
    if render and report.rows:
        from .plotting import render_report

        render_report(report, session_dir / REPORT_PNG)


def load_events(config: Config, source: str, duration_s: float, seed: int, site: str) -> EventStream:
    if source == "sim":
        alice, bob = simulate_run(config.source(), config.channel(), duration_s, seed)
        return alice if site == "alice" else bob
    return EventStream.load(source)


def run_alice(config: Config, addr: str, session_dir, events: str = "sim", render: bool = True) -> SessionResult:
    host, port = parse_addr(addr)
    ev = load_events(config, events, config.duration_s, config.seed, "alice")
    pool = open_pool(config, "alice", session_dir)
    transport = listen(host, port, timeout=config.timeout_s)
    result = AlicePeer(config, transport, pool, ev, store=open_store(session_dir, "alice"),
                       duration_s=config.duration_s).run()
    write_session(session_dir, result.report, [result], render=render)
    return result


def run_bob(config: Config, addr: str, session_dir, events: str = "sim", sync: str | None = None,
            render: bool = True) -> SessionResult:
    """Bob over TCP. With ``events='sim'`` the sync pulses come from the same
    simulated run; with an event file, ``sync`` names Alice's event file
    (only its ticks are used, as on the sync fiber)."""
    host, port = parse_addr(addr)
    if events == "sim":
        alice_ev, bob_ev, syncs = generate_streams(config, config.duration_s, config.seed)
    else:
        if sync is None:
            raise ValueError("replaying Bob's events needs the sync pulse file (--sync)")
        bob_ev = EventStream.load(events)
        syncs = emit_sync(EventStream.load(sync), config.delay_ticks)
    pool = open_pool(config, "bob", session_dir)
    transport = connect(host, port, retry_s=config.timeout_s)
    result = BobPeer(config, transport, pool, bob_ev, syncs, store=open_store(session_dir, "bob"),
                     duration_s=config.duration_s).run()
    write_session(session_dir, result.report, [result], render=render)
    return result


def replay(config: Config, role: str, transcript, events: EventStream, syncs: SyncStream | None = None,
           duration_s: float = 0.0, pool: AuthKeyPool | None = None) -> SessionResult:
    """Re-run one peer against the frames its counterpart sent in a transcript."""
    from .protocol.transport import A_TO_B, B_TO_A, ReplayTransport

    pool = pool if pool is not None else open_pool(config, role)
    if role == "alice":
        incoming = transcript.frames(B_TO_A)
        return AlicePeer(config, ReplayTransport(incoming), pool, events, duration_s=duration_s).run()
    incoming = transcript.frames(A_TO_B)
    return BobPeer(config, ReplayTransport(incoming), pool, events, syncs, duration_s=duration_s).run()
