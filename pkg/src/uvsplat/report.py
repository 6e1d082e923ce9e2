"""Figure rendering for CLI reports: loss traces and check tables.

Figures are written next to their delimited counterparts (trace.csv,
gradcheck.csv) so a run leaves both machine-readable and eyeball-ready
artifacts.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

TRACE_COLUMNS = ("total", "nml", "lmk", "lap")


def save_trace_plot(trace, path) -> None:
    """Loss curves over iterations on a log scale, total emphasized."""
    rows = np.asarray(trace, dtype=np.float64).reshape(-1, 5)
    fig, ax = plt.subplots(figsize=(7, 4))
    for col, name in enumerate(TRACE_COLUMNS, start=1):
        lw = 1.8 if name == "total" else 0.9
        ax.plot(rows[:, 0], np.maximum(rows[:, col], 1e-16), linewidth=lw,
                label=f"{name} ({rows[-1, col]:.3g})")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=9)
    ax.grid(True, which="both", alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_check_report(results, csv_path, fig_path=None) -> None:
    """gradcheck results as CSV plus an optional log-scale bar figure."""
    lines = ["name,value,tol,op,passed"]
    lines += [f"{r.name},{r.value:.9g},{r.tol:.9g},{r.op},{int(r.passed)}" for r in results]
    Path(csv_path).write_text("\n".join(lines) + "\n")
    if fig_path is None:
        return
    fig, ax = plt.subplots(figsize=(8, 0.5 * len(results) + 1.5))
    names = [r.name for r in results]
    vals = [max(r.value, 1e-18) for r in results]
    tols = [max(r.tol, 1e-18) for r in results]
    colors = ["#2a7e43" if r.passed else "#b03a2e" for r in results]
    y = np.arange(len(results))
    ax.barh(y, vals, color=colors, height=0.55)
    for yi, (tol, r) in enumerate(zip(tols, results)):
        ax.plot([tol, tol], [yi - 0.35, yi + 0.35], color="k", linewidth=1.2)
        ax.text(tol, yi - 0.42, f"tol {r.op} {r.tol:.0e}", fontsize=7, ha="center")
    ax.set_yticks(y, names, fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("check value (bars) vs tolerance (ticks)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
