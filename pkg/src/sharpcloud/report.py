"""Report writers: delimited outputs plus the matplotlib figures rendered
alongside them.

Every CSV column is documented in the README; figures are saved without
volatile metadata so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVEFIG_KW = dict(dpi=110, metadata={"Software": None})

TRAINING_LOG_COLUMNS = ["step", "surface", "edge", "repulsion", "regression",
                        "joint", "edge_point_count"]


def write_training_log(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAINING_LOG_COLUMNS)
        for step, br in enumerate(history):
            w.writerow([step, f"{br.surface:.9g}", f"{br.edge:.9g}",
                        f"{br.repulsion:.9g}", f"{br.regression:.9g}",
                        f"{br.joint:.9g}", br.edge_point_count])


def save_loss_curve(path, history):
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = range(len(history))
    ax.plot(steps, [h.joint for h in history], label="joint", lw=1.5)
    ax.plot(steps, [h.surface for h in history], label="surface", lw=0.8)
    ax.plot(steps, [h.repulsion for h in history], label="repulsion", lw=0.8)
    ax.plot(steps, [h.edge for h in history], label="edge", lw=0.8)
    ax.plot(steps, [h.regression for h in history], label="regression", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def write_stats_csv(path, rows):
    """rows: iterables of (label, stage, ErrorStats pair dict)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "stage", "n_points",
                    "surface_mean", "surface_rms", "edge_mean", "edge_rms",
                    "surface_mean_x1e3", "surface_rms_x1e3",
                    "edge_mean_x1e3", "edge_rms_x1e3"])
        for label, stage, n, surf, edge in rows:
            edge_cols = ([f"{edge.mean:.9g}", f"{edge.rms:.9g}",
                          f"{edge.mean_x1e3:.9g}", f"{edge.rms_x1e3:.9g}"]
                         if edge is not None else ["", "", "", ""])
            w.writerow([label, stage, n, f"{surf.mean:.9g}", f"{surf.rms:.9g}"]
                       + edge_cols[:2]
                       + [f"{surf.mean_x1e3:.9g}", f"{surf.rms_x1e3:.9g}"]
                       + edge_cols[2:])


def write_histogram_csv(path, entries):
    """entries: (label, metric, counts, bin_edges) tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "metric", "bin_lo", "bin_hi", "count"])
        for label, metric, counts, edges in entries:
            for i, c in enumerate(counts):
                w.writerow([label, metric, f"{edges[i]:.9g}", f"{edges[i + 1]:.9g}", int(c)])


def save_histogram_figure(path, entries, title=""):
    """Overlaid step histograms; entries: (label, counts, bin_edges)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, counts, edges in entries:
        ax.stairs(counts, edges, label=label, fill=False, lw=1.2)
    ax.set_xlabel("distance")
    ax.set_ylabel("points")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def write_sweep_report(out_dir, rows):
    """CSV tables and per-metric figures for a quantization-noise sweep.

    Writes sweep_stats.csv, sweep_histograms.csv, and one figure per
    (metric, n_q) pair comparing the input and output distributions.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_stats_csv(out_dir / "sweep_stats.csv",
                    [(f"nq{r.n_q}", r.stage, r.n_points, r.surface, r.edge) for r in rows])
    hist_entries = []
    for r in rows:
        hist_entries.append((f"nq{r.n_q}_{r.stage}", "surface", r.surface_hist, r.hist_edges))
        hist_entries.append((f"nq{r.n_q}_{r.stage}", "edge", r.edge_hist, r.hist_edges))
    write_histogram_csv(out_dir / "sweep_histograms.csv", hist_entries)

    by_nq = {}
    for r in rows:
        by_nq.setdefault(r.n_q, {})[r.stage] = r
    for n_q, stages in sorted(by_nq.items(), reverse=True):
        for metric in ("surface", "edge"):
            entries = [(stage, getattr(r, f"{metric}_hist"), r.hist_edges)
                       for stage, r in stages.items()]
            save_histogram_figure(out_dir / f"hist_{metric}_nq{n_q}.png", entries,
                                  title=f"point-to-{metric} distance, N_q={n_q}")
    return out_dir
