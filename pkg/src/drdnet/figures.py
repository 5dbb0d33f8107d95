"""Figure rendering for CLI reports.

Every writer takes already-computed data and a target path; nothing here
touches the model or the filesystem beyond the single savefig.  PNGs are
written without the Software metadata key so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

_META = {"Software": None}


def _finish(fig, path):
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def save_loss_curve(trace_rows, path) -> None:
    """Semilog loss curves from parsed trace rows (iter, lr, total, rain, detail)."""
    rows = np.asarray(list(trace_rows), dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    if rows.size:
        it = rows[:, 0]
        ax.semilogy(it, rows[:, 2], label="total", color="tab:blue")
        ax.semilogy(it, rows[:, 3], label="rain", color="tab:orange", alpha=0.8)
        if np.any(rows[:, 4] > 0):
            ax.semilogy(it, rows[:, 4], label="detail", color="tab:green", alpha=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend(loc="upper right")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _finish(fig, path)


def save_metric_chart(report, path) -> None:
    """Per-image PSNR bars with the SSIM trace on a twin axis."""
    n = len(report.ids)
    x = np.arange(n)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * n + 3.0), 4.2))
    ax.bar(x, report.psnr_db, color="tab:blue", alpha=0.75, label="PSNR")
    ax.axhline(report.mean_psnr_db, color="tab:blue", linestyle="--",
               linewidth=1.0, label="mean PSNR")
    ax.set_xticks(x)
    ax.set_xticklabels(report.ids, rotation=90, fontsize=7)
    ax.set_ylabel("PSNR (dB)")
    ax2 = ax.twinx()
    ax2.plot(x, report.ssim, color="tab:red", marker="o", markersize=3,
             linewidth=1.0, label="SSIM")
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(0.0, 1.0)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="lower right", fontsize=8)
    ax.set_title("pairwise image quality")
    fig.tight_layout()
    _finish(fig, path)


def save_gate_chart(report, path) -> None:
    """Bar chart of per-channel SE gates with the ranked channels marked."""
    gates = report.gates
    x = np.arange(gates.size)
    colors = np.full(gates.size, "0.65", dtype=object)
    for c, _ in report.bottom:
        colors[c] = "tab:red"
    for c, _ in report.top:
        colors[c] = "tab:green"
    fig, ax = plt.subplots(figsize=(max(6.0, 0.12 * gates.size + 3.0), 3.8))
    ax.bar(x, gates, color=list(colors))
    ax.axhline(0.5, color="k", linewidth=0.8, linestyle=":")
    ax.set_xlabel("channel")
    ax.set_ylabel("gate")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f"SE gates, block {report.block_index} "
                 "(green = strongest, red = weakest)")
    fig.tight_layout()
    _finish(fig, path)


def save_rf_plot(rows, path) -> None:
    """Receptive-field growth: published formula column vs computed column."""
    layers = [r.layer for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(layers, [r.rf_formula for r in rows], marker="s", markersize=4,
            label="published formula", color="tab:orange")
    ax.plot(layers, [r.rf_computed for r in rows], marker="o", markersize=4,
            label="computed", color="tab:blue")
    ax.set_xlabel("layer")
    ax.set_ylabel("receptive field (px)")
    ax.set_title("detail-branch receptive field growth")
    ax.legend(loc="upper left")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _finish(fig, path)
