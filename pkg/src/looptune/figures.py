"""Report figures rendered from the delimited run artifacts."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: Path, expect_schema: str | None = None):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            schema = first.lstrip("# ").strip()
            if expect_schema and schema != expect_schema:
                raise ValueError(f"{path}: unknown schema {schema!r}")
            header = fh.readline().strip().split(",")
        else:
            header = first.split(",")
        rows = list(csv.reader(fh))
    return header, rows


def plot_candidate_shifts(outdir: Path) -> Path:
    """Box plot of per-component shifts of every evaluated candidate."""
    from .runner import SHIFTS_SCHEMA
    outdir = Path(outdir)
    header, rows = _read_csv(outdir / "candidate_shifts.csv", SHIFTS_SCHEMA)
    comp_cols = header[3:]
    data = np.array([[float(v) for v in row[3:]] for row in rows]) if rows else \
        np.zeros((0, len(comp_cols)))

    fig, ax = plt.subplots(figsize=(1.2 * len(comp_cols) + 2, 4))
    if len(data):
        ax.boxplot([data[:, j] for j in range(data.shape[1])],
                   tick_labels=comp_cols, showfliers=True)
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_ylabel("shift from baseline")
    ax.set_title("Evaluated candidate shifts")
    fig.tight_layout()
    path = outdir / "candidate_shifts.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_step_comparison(outdir: Path) -> Path:
    """Baseline vs retuned noise-free step responses."""
    outdir = Path(outdir)
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, label, style in (("step_theta0.csv", "baseline", "-"),
                               ("step_cfe.csv", "retuned", "-")):
        path = outdir / name
        if not path.is_file():
            continue
        header, rows = _read_csv(path)
        cols = {h: i for i, h in enumerate(header)}
        t = np.array([float(r[cols["t"]]) for r in rows])
        y = np.array([float(r[cols["y1"]]) for r in rows])
        ax.plot(t, y, style, label=label)
        if "r1" in cols and label == "baseline":
            r = np.array([float(r[cols["r1"]]) for r in rows])
            ax.plot(t, r, ":", color="gray", lw=0.9, label="reference")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("pressure deviation")
    ax.set_title("Step response before and after retuning")
    ax.legend()
    fig.tight_layout()
    path = outdir / "step_comparison.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_all(outdir: Path) -> list[Path]:
    return [plot_candidate_shifts(outdir), plot_step_comparison(outdir)]
