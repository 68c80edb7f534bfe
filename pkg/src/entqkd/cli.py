"""Command-line entry point: ``entqkd <command> ...``."""

from __future__ import annotations

import argparse
import logging
import struct
import sys
import time
from pathlib import Path

from .config import Config, load_config
from .errors import QKDError
from .keystore import otp_decrypt, otp_encrypt
from .report import SessionReport

log = logging.getLogger("entqkd")

CIPHER_MAGIC = b"QKDOTP1\0"
CIPHER_HEADER = struct.Struct("<8sQQ")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        over["duration_s"] = args.duration
    return cfg.with_(**over) if over else cfg


def _print_report(report: SessionReport, sort_qber: bool = False) -> None:
    sys.stdout.write(report.to_csv(sort_qber=sort_qber))
    sys.stdout.flush()


def cmd_simulate(args) -> int:
    from .pipeline import simulate

    cfg = _config(args)
    t0 = time.perf_counter()
    res = simulate(cfg, session_dir=args.session, render=not args.no_plot)
    log.info("simulated %.0f s in %.1f s wall", cfg.duration_s, time.perf_counter() - t0)
    if args.save_events:
        out = Path(args.save_events)
        out.mkdir(parents=True, exist_ok=True)
        res.alice_events.save(out / "events_alice.bin")
        res.bob_events.save(out / "events_bob.bin")
    _print_report(res.report, args.sort_qber)
    if not res.keys_agree:
        log.error("final keys differ between the two sites")
        return 1
    return 1 if res.report.abort_cause else 0


def cmd_alice(args) -> int:
    from .pipeline import run_alice

    res = run_alice(_config(args), args.listen, args.session, events=args.events, render=not args.no_plot)
    _print_report(res.report)
    return 1 if res.aborted else 0


def cmd_bob(args) -> int:
    from .pipeline import run_bob

    res = run_bob(_config(args), args.connect, args.session, events=args.events, sync=args.sync,
                  render=not args.no_plot)
    _print_report(res.report)
    return 1 if res.aborted else 0


def cmd_report(args) -> int:
    from .pipeline import REPORT_CSV, REPORT_PNG

    session = Path(args.session)
    report = SessionReport.load(session / REPORT_CSV)
    _print_report(report, args.sort_qber)
    if report.rows and not args.no_plot:
        from .plotting import render_report

        render_report(report, session / REPORT_PNG, sort_qber=args.sort_qber)
    return 0


def _store(args):
    from .pipeline import keys_file
    from .keystore import KeyStore

    path = keys_file(args.session, args.site)
    if not path.exists():
        raise QKDError(f"no key store at {path}")
    return path, KeyStore.load(path)


def cmd_encrypt(args) -> int:
    path, store = _store(args)
    data = Path(args.inp).read_bytes()
    handle = store.get_key(8 * len(data))
    body = otp_encrypt(data, handle)
    Path(args.out).write_bytes(CIPHER_HEADER.pack(CIPHER_MAGIC, handle.offset, len(data)) + body)
    store.save(path)
    log.info("used %d key bits at offset %d", 8 * len(data), handle.offset)
    return 0


def cmd_decrypt(args) -> int:
    path, store = _store(args)
    blob = Path(args.inp).read_bytes()
    if len(blob) < CIPHER_HEADER.size:
        raise QKDError("ciphertext too short")
    magic, offset, length = CIPHER_HEADER.unpack_from(blob)
    body = blob[CIPHER_HEADER.size:]
    if magic != CIPHER_MAGIC or length != len(body):
        raise QKDError("not a ciphertext produced by encrypt")
    handle = store.take_range(offset, 8 * length)
    Path(args.out).write_bytes(otp_decrypt(body, handle))
    store.save(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entqkd", description="Entanglement-based QKD post-processing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--session", help="session directory for transcript, report, keys and pool")
        sp.add_argument("--no-plot", action="store_true", help="skip rendering report.png")
        if seed:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--duration", type=float, help="simulated acquisition seconds")

    sp = sub.add_parser("simulate", help="both sites in-process over a loopback channel")
    common(sp)
    sp.add_argument("--sort-qber", action="store_true")
    sp.add_argument("--save-events", metavar="DIR", help="write both event streams to DIR")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("alice", help="run Alice, listening on host:port")
    sp.add_argument("--listen", required=True)
    sp.add_argument("--events", default="sim", help="'sim' or an event file")
    common(sp)
    sp.set_defaults(func=cmd_alice)

    sp = sub.add_parser("bob", help="run Bob, connecting to host:port")
    sp.add_argument("--connect", required=True)
    sp.add_argument("--events", default="sim", help="'sim' or an event file")
    sp.add_argument("--sync", help="Alice's event file; its timestamps stand in for the sync fiber")
    common(sp)
    sp.set_defaults(func=cmd_bob)

    sp = sub.add_parser("report", help="print a session report and render its figure")
    sp.add_argument("--session", required=True)
    sp.add_argument("--sort-qber", action="store_true")
    sp.add_argument("--no-plot", action="store_true")
    sp.set_defaults(func=cmd_report)

    for name, func, site in (("encrypt", cmd_encrypt, "alice"), ("decrypt", cmd_decrypt, "bob")):
        sp = sub.add_parser(name, help=f"one-time-pad {name} with stored final key")
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--session", default=".")
        sp.add_argument("--site", choices=("alice", "bob"), default=site)
        sp.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (QKDError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
