"""Per-block figure: QBER, key budget and final rate for each block."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import SessionReport  # noqa: E402


def render_report(report: SessionReport, path, sort_qber: bool = True, dpi: int = 120):
    rows = report.sorted_by_qber() if sort_qber else report.rows
    x = np.arange(len(rows))
    fig, (ax_q, ax_len, ax_rate) = plt.subplots(3, 1, figsize=(7, 8), sharex=True)

    ax_q.plot(x, [100 * r.q_est for r in rows], "o", ms=3, label="estimated QBER")
    if any(r.q_real is not None for r in rows):
        ax_q.plot(x, [100 * r.q_real if r.q_real is not None else np.nan for r in rows],
                  "s", ms=3, mfc="none", label="real QBER")
    ax_q.set_ylabel("QBER [%]")
    ax_t = ax_q.twinx()
    ax_t.plot(x, [r.acquisition_seconds for r in rows], color="0.6", lw=0.8)
    ax_t.set_ylabel("acquisition [s]", color="0.4")
    ax_q.legend(loc="upper left", fontsize=8, frameon=False)

    ax_len.bar(x, [r.final_len for r in rows], label="final key", color="tab:green")
    bottom = np.array([r.final_len for r in rows], dtype=float)
    disclosed = np.array([r.cascade_disclosed + r.verify_disclosed for r in rows], dtype=float)
    ax_len.bar(x, disclosed, bottom=bottom, label="disclosed by CASCADE", color="tab:orange")
    ax_len.bar(x, [r.pa_discarded for r in rows], bottom=bottom + disclosed,
               label="discarded in PA", color="tab:red")
    ax_len.set_ylabel("bits")
    top = max((r.post_estimation for r in rows), default=1)
    ax_len.set_ylim(0, 1.3 * top)
    ax_len.legend(loc="upper center", ncol=3, fontsize=8, frameon=False)

    ax_rate.plot(x, [r.rate_bits_per_s for r in rows], ".-", lw=0.8)
    ax_rate.set_ylabel("final rate [bit/s]")
    ax_rate.set_xlabel("block (sorted by estimated QBER)" if sort_qber else "block")

    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
