"""Acceptance criteria, one test per criterion, each reporting PASS or FAIL."""

import itertools
import math
import struct
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, free_port
from entqkd.acquisition import emit_sync, match_coincidences
from entqkd.auth import padded_hash
from entqkd.cascade import CascadeConfig, pass_permutations, reconcile, verify_keys, verify_seed, verify_tag
from entqkd.config import Config
from entqkd.keystore import KeyStore
from entqkd.photon_sim import EventStream, Site
from entqkd.pipeline import replay, simulate
from entqkd.privacy_amp import toeplitz_hash
from entqkd.protocol.frames import HEADER_LEN, MsgType, decode_frame
from entqkd.protocol.session import SessionState
from entqkd.protocol.transport import A_TO_B, B_TO_A, Transcript
from entqkd.report import OK, SessionReport

from oracles import brute_force_match_matrix, cascade_first_pass


def record(number, title, checks):
    """checks: list of (description, ok). Prints one line, then asserts."""
    ok = all(c for _, c in checks)
    detail = "; ".join(f"{d}{'' if c else ' [FAIL]'}" for d, c in checks)
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def test_01_pipeline_ratios(corpus_run):
    s = corpus_run.report.summary()
    post = s["post_estimation_total"] / s["sifted_total"]
    usable = s["corrected_usable_total"] / s["post_estimation_total"]
    final_usable = s["final_total"] / s["corrected_usable_total"]
    final_sifted = s["final_total"] / s["sifted_total"]
    record(1, "pipeline ratios", [
        (f"post/sifted={post:.4f}", post == 0.75),
        (f"usable/post={usable:.4f} in [0.55,0.65]", 0.55 <= usable <= 0.65),
        (f"final/usable={final_usable:.4f} in [0.67,0.77]", 0.67 <= final_usable <= 0.77),
        (f"final/sifted={final_sifted:.4f} in [0.28,0.37]", 0.28 <= final_sifted <= 0.37),
        (f"wall={corpus_run.wall_seconds:.1f}s < 120s", corpus_run.wall_seconds < 120),
    ])


def test_02_qber_fidelity(corpus_run):
    s = corpus_run.report.summary()
    rows = corpus_run.report.rows
    q_real, q_est, sd = s["mean_q_real"], s["mean_q_est"], s["std_q_est"]
    sigma0 = math.sqrt(q_real * (1 - q_real) / 625)
    # standard error of a sample standard deviation over N blocks
    band = 3 * sigma0 / math.sqrt(2 * (len(rows) - 1))
    record(2, "QBER fidelity", [
        (f"mean q_real={q_real:.4f} in [0.058,0.070]", 0.058 <= q_real <= 0.070),
        (f"|q_est-q_real|={abs(q_est - q_real):.4f} <= 0.005", abs(q_est - q_real) <= 0.005),
        (f"std q_est={sd:.4f} within {sigma0:.4f}+-{band:.4f}", abs(sd - sigma0) <= band),
    ])


def test_03_key_agreement():
    confirmed = agree = total = 0
    for seed in range(1, 11):
        res = simulate(Config(), duration_s=120, seed=seed, render=False)
        a, b = res.alice.final_keys, res.bob.final_keys
        for row in res.report.rows:
            total += 1
            if row.status == OK:
                confirmed += 1
                agree += np.packbits(a[row.block_id]).tobytes() == np.packbits(b[row.block_id]).tobytes()
    record(3, "key agreement", [
        (f"identical {agree}/{confirmed} confirmed blocks", agree == confirmed and confirmed > 0),
        (f"confirmed {confirmed}/{total} >= 99%", confirmed >= 0.99 * total),
    ])


def test_04_rate(corpus_run):
    rate = corpus_run.report.summary()["rate_bits_per_s"]
    record(4, "final key rate", [(f"{rate:.2f} bit/s in [65,90]", 65 <= rate <= 90)])


def test_05_toeplitz_universality():
    n, m = 6, 3
    seeds = np.array(list(itertools.product((0, 1), repeat=n + m - 1)), dtype=np.uint8)
    rng = np.random.default_rng(2024)
    counts = []
    for _ in range(20):
        x = rng.integers(0, 2, n, dtype=np.uint8)
        y = x
        while np.array_equal(x, y):
            y = rng.integers(0, 2, n, dtype=np.uint8)
        counts.append(sum(np.array_equal(toeplitz_hash(x, s, m), toeplitz_hash(y, s, m)) for s in seeds))
    linear = True
    for _ in range(10_000):
        nn = int(rng.integers(1, 48))
        mm = int(rng.integers(1, 24))
        x, y = rng.integers(0, 2, (2, nn), dtype=np.uint8)
        s = rng.integers(0, 2, nn + mm - 1, dtype=np.uint8)
        if not np.array_equal(toeplitz_hash(x ^ y, s, mm), toeplitz_hash(x, s, mm) ^ toeplitz_hash(y, s, mm)):
            linear = False
            break
    record(5, "Toeplitz 2-universality", [
        (f"collisions per pair {sorted(set(counts))} == [32]", set(counts) == {32}),
        ("linearity over 10^4 triples", linear),
    ])


def test_06_cascade_oracle():
    rng = np.random.default_rng(64)
    sizes = CascadeConfig().block_sizes(0.0229, 64)
    perms = pass_permutations(64, 17, 5, len(sizes))
    trace_ok = fixed = bound_ok = True
    for pos in range(64):
        alice = rng.integers(0, 2, 64, dtype=np.uint8)
        bob = alice.copy()
        bob[pos] ^= 1
        res, _ = reconcile(alice, bob, 0.0229, perms=perms, record_trace=True)
        ref, flips = cascade_first_pass(alice, bob, perms[0], sizes[0])
        trace_ok &= res.trace[0] == ref and flips == [pos]
        bound_ok &= len(res.trace[0]) <= 2 + math.ceil(math.log2(sizes[0])) * len(flips)
        fixed &= bool(np.array_equal(res.bits, alice))

    residual = leaked_through = 0
    trials = 1000
    for t in range(trials):
        a = rng.integers(0, 2, 1875, dtype=np.uint8)
        b = a ^ (rng.random(1875) < 0.064).astype(np.uint8)
        res, _ = reconcile(a, b, 0.064, session_id=t, block_id=t)
        wrong = not np.array_equal(res.bits, a)
        residual += wrong
        seed = verify_seed(t, t)
        if wrong and verify_keys(verify_tag(a, seed), verify_tag(res.bits, seed)):
            leaked_through += 1
    record(6, "CASCADE oracle", [
        (f"n=64 k1={sizes[0]} trace matches reference for 64 positions", trace_ok),
        ("pass-1 parities <= 2 + ceil(log2 k1) * errors", bound_ok),
        ("all single errors corrected", fixed),
        (f"residual before verify {residual}/{trials} < 1%", residual < 0.01 * trials),
        (f"residual after verify {leaked_through}/{trials} == 0", leaked_through == 0),
    ])


def test_07_matching_oracle():
    rng = np.random.default_rng(7)
    mismatches = 0
    compared = 0
    for _ in range(200):
        n = int(rng.integers(0, 1001))
        span = int(rng.integers(max(n, 1) * 5, max(n, 1) * 60 + 2))
        alice = np.unique(rng.integers(0, span, n))
        keep = rng.random(len(alice)) < 0.6
        jitter = rng.integers(-12, 13, len(alice))
        bob = np.concatenate([alice[keep] + jitter[keep], rng.integers(0, span, int(rng.integers(0, 40)))])
        bob = np.unique(bob[bob >= 0])
        syncs = emit_sync(EventStream(Site.ALICE, alice, np.zeros(len(alice), np.uint8)))
        ev = EventStream(Site.BOB, bob, np.zeros(len(bob), np.uint8))
        for w in (0, 1, 8, 20):
            seqs, idx = match_coincidences(syncs, ev, w)
            compared += 1
            mismatches += list(zip(seqs.tolist(), idx.tolist())) != brute_force_match_matrix(alice, bob, w)
    record(7, "matching oracle", [(f"{compared - mismatches}/{compared} stream-window cases agree", mismatches == 0)])


def test_08_transcript_determinism(tmp_path):
    runs = [simulate(Config(), duration_s=120, seed=3, session_dir=tmp_path / f"r{i}", render=False)
            for i in range(2)]
    same_tr = all((tmp_path / "r0" / f).read_bytes() == (tmp_path / "r1" / f).read_bytes()
                  for f in ("transcript_alice.bin", "transcript_bob.bin"))
    same_csv = (tmp_path / "r0" / "report.csv").read_bytes() == (tmp_path / "r1" / "report.csv").read_bytes()
    frames = len(runs[0].alice.transcript.records)
    record(8, "transcript determinism", [
        (f"{frames} frames byte-identical", same_tr and frames > 0),
        ("report CSV byte-identical", same_csv),
    ])


def _cli(*args):
    return [sys.executable, "-m", "entqkd", *args]


def test_09_network_parity(tmp_path):
    seed, duration = 4, 120
    port = free_port()
    addr = f"127.0.0.1:{port}"
    common = ["--seed", str(seed), "--duration", str(duration), "--no-plot"]
    alice = subprocess.Popen(_cli("alice", "--listen", addr, "--session", str(tmp_path / "a"), *common),
                             stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    time.sleep(0.3)
    bob = subprocess.run(_cli("bob", "--connect", addr, "--session", str(tmp_path / "b"), *common),
                         capture_output=True, timeout=300)
    alice.communicate(timeout=300)
    local = simulate(Config(), duration_s=duration, seed=seed, render=False)

    def keys(path):
        store = KeyStore.load(path)
        return store.take_range(0, store.total).bits if store.total else np.zeros(0, np.uint8)

    ka, kb = keys(tmp_path / "a" / "keys_alice.bin"), keys(tmp_path / "b" / "keys_bob.bin")
    net = SessionReport.load(tmp_path / "b" / "report.csv").summary()
    loc = local.report.summary()
    totals = [k for k in net if k.endswith("_total")]
    record(9, "network parity", [
        (f"exit codes alice={alice.returncode} bob={bob.returncode}", alice.returncode == bob.returncode == 0),
        (f"TCP keys equal in-process keys ({len(ka)} bits)",
         np.array_equal(ka, local.alice.key_bits()) and np.array_equal(kb, local.bob.key_bits()) and len(ka) > 0),
        ("report totals equal", all(net[k] == loc[k] for k in totals)),
    ])


_BLOCK_TYPES = {MsgType.EST_SAMPLE, MsgType.EST_RESULT, MsgType.CAS_SHUFFLE_COMMIT, MsgType.CAS_PARITY_REQ,
                MsgType.CAS_PARITY_RSP, MsgType.CAS_VERIFY, MsgType.PA_SEED, MsgType.PA_CONFIRM}


def _last_frame_of_block(frames):
    last = {}
    for i, data in enumerate(frames):
        f = decode_frame(data)
        if f.msg_type in _BLOCK_TYPES:
            last[struct.unpack_from("<I", f.payload)[0]] = i
    return last


def _tamper(data, rng):
    data = bytearray(data)
    pos = int(rng.integers(0, len(data)))
    data[pos] ^= 1 << int(rng.integers(0, 8))
    return bytes(data)


def test_10_authentication(short_run):
    cfg = Config().with_(seed=11, duration_s=60)
    rng = np.random.default_rng(10)
    ok_tamper = True
    cases = 0
    for role, direction, events, syncs, original in (
        ("alice", B_TO_A, short_run.alice_events, None, short_run.alice),
        ("bob", A_TO_B, short_run.bob_events, emit_sync(short_run.alice_events, cfg.delay_ticks), short_run.bob),
    ):
        frames = original.transcript.frames(direction)
        last = _last_frame_of_block(frames)
        for i in sorted(rng.choice(len(frames), 20, replace=False).tolist()):
            bad = list(frames)
            bad[i] = _tamper(bad[i], rng)
            tr = Transcript()
            for f in bad:
                tr.add(direction, f)
            res = replay(cfg, role, tr, events, syncs)
            allowed = {b for b, j in last.items() if j < i}
            committed = set(res.final_keys)
            same = all(np.array_equal(res.final_keys[b], original.final_keys[b]) for b in committed)
            ok_tamper &= res.state == SessionState.ABORTED and committed <= allowed and same
            cases += 1

    # forgery at an 8-bit tag: every 15-bit hash key, many message pairs
    width, m = 8, 8
    keys = np.array(list(itertools.product((0, 1), repeat=width + m - 1)), dtype=np.uint8)
    hits = trials = 0
    for _ in range(40):
        x = rng.integers(0, 2, int(rng.integers(0, width)), dtype=np.uint8)
        y = rng.integers(0, 2, int(rng.integers(0, width)), dtype=np.uint8)
        if len(x) == len(y) and np.array_equal(x, y):
            continue
        delta = rng.integers(0, 2, m, dtype=np.uint8)
        for k in keys:
            hits += np.array_equal(padded_hash(x, k, width, m) ^ padded_hash(y, k, width, m), delta)
        trials += len(keys)
    p = 2.0 ** -m
    rate = hits / trials
    sigma = math.sqrt(p * (1 - p) / trials)
    record(10, "authentication", [
        (f"{cases} tampered replays abort with no key for affected blocks", ok_tamper),
        (f"forgery rate {rate:.6f} vs 2^-8={p:.6f} +- {3 * sigma:.6f}", abs(rate - p) <= 3 * sigma),
    ])
