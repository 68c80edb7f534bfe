"""Per-block session report: CSV rows plus a '#'-prefixed summary."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

OK = "ok"
QBER_ABORT = "qber_abort"
VERIFY_FAILED = "verify_failed"
EMPTY = "empty"


@dataclass
class BlockReport:
    block_id: int
    status: str
    q_est: float
    q_real: float | None
    acquisition_seconds: float
    sifted_len: int
    est_disclosed: int
    cascade_disclosed: int
    verify_disclosed: int
    pa_discarded: int
    final_len: int
    rate_bits_per_s: float
    round_trips: int

    @property
    def post_estimation(self) -> int:
        return self.sifted_len - self.est_disclosed

    @property
    def corrected_usable(self) -> int:
        """Key left after error correction and verification."""
        return self.post_estimation - self.cascade_disclosed - self.verify_disclosed

    def conserved(self) -> bool:
        return self.sifted_len == (self.est_disclosed + self.cascade_disclosed + self.verify_disclosed
                                   + self.pa_discarded + self.final_len)


COLUMNS = [f.name for f in fields(BlockReport)]


@dataclass
class SessionReport:
    rows: list[BlockReport] = field(default_factory=list)
    duration_s: float = 0.0
    state: str = "CLOSED"
    abort_cause: str = ""
    warnings: list[str] = field(default_factory=list)

    def sorted_by_qber(self) -> list[BlockReport]:
        return sorted(self.rows, key=lambda r: (r.q_est, r.block_id))

    def summary(self) -> dict:
        rows = self.rows
        q_est = [r.q_est for r in rows]
        q_real = [r.q_real for r in rows if r.q_real is not None]
        final = sum(r.final_len for r in rows)
        out = {
            "state": self.state,
            "abort_cause": self.abort_cause,
            "blocks": len(rows),
            "blocks_ok": sum(r.status == OK for r in rows),
            "blocks_qber_abort": sum(r.status == QBER_ABORT for r in rows),
            "blocks_verify_failed": sum(r.status == VERIFY_FAILED for r in rows),
            "sifted_total": sum(r.sifted_len for r in rows),
            "post_estimation_total": sum(r.post_estimation for r in rows),
            "corrected_usable_total": sum(r.corrected_usable for r in rows),
            "final_total": final,
            "est_disclosed_total": sum(r.est_disclosed for r in rows),
            "cascade_disclosed_total": sum(r.cascade_disclosed for r in rows),
            "verify_disclosed_total": sum(r.verify_disclosed for r in rows),
            "pa_discarded_total": sum(r.pa_discarded for r in rows),
            "mean_q_est": _mean(q_est),
            "std_q_est": _std(q_est),
            "mean_q_real": _mean(q_real) if q_real else None,
            "duration_s": self.duration_s,
            "rate_bits_per_s": final / self.duration_s if self.duration_s > 0 else 0.0,
            "round_trips_per_block": _mean([r.round_trips for r in rows if r.status == OK]),
        }
        if self.warnings:
            out["warnings"] = "; ".join(self.warnings)
        return out

    def to_csv(self, sort_qber: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in (self.sorted_by_qber() if sort_qber else self.rows):
            writer.writerow([_fmt(v) for v in asdict(r).values()])
        for k, v in self.summary().items():
            buf.write(f"# {k}={_fmt(v)}\n")
        return buf.getvalue()

    def write(self, path, sort_qber: bool = False) -> None:
        Path(path).write_text(self.to_csv(sort_qber))

    @classmethod
    def from_csv(cls, text: str) -> "SessionReport":
        lines = text.splitlines()
        body = [l for l in lines if not l.startswith("#")]
        meta = dict(l[2:].split("=", 1) for l in lines if l.startswith("# "))
        rows = []
        for rec in csv.DictReader(body):
            rows.append(BlockReport(
                block_id=int(rec["block_id"]),
                status=rec["status"],
                q_est=float(rec["q_est"]),
                q_real=float(rec["q_real"]) if rec["q_real"] else None,
                acquisition_seconds=float(rec["acquisition_seconds"]),
                sifted_len=int(rec["sifted_len"]),
                est_disclosed=int(rec["est_disclosed"]),
                cascade_disclosed=int(rec["cascade_disclosed"]),
                verify_disclosed=int(rec["verify_disclosed"]),
                pa_discarded=int(rec["pa_discarded"]),
                final_len=int(rec["final_len"]),
                rate_bits_per_s=float(rec["rate_bits_per_s"]),
                round_trips=int(rec["round_trips"]),
            ))
        rows.sort(key=lambda r: r.block_id)
        warnings = meta.get("warnings", "")
        return cls(rows, float(meta.get("duration_s", 0) or 0), meta.get("state", ""),
                   meta.get("abort_cause", ""), [w for w in warnings.split("; ") if w])

    @classmethod
    def load(cls, path) -> "SessionReport":
        return cls.from_csv(Path(path).read_text())


def _mean(xs):
    return sum(xs) / len(xs) if xs else 0.0


def _std(xs):
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)
