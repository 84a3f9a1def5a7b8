"""Render figures from a run directory's metrics.csv.

Reads the long-format CSV written by the runner and saves PNG figures next
to it: loss curve, task metric, per-layer feature-gradient norms (with
pruning boundaries when a summary is present), sparsity schedule, and the
active decimal bits.
"""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load_metrics(path: str):
    """Parse metrics.csv into per-layer column series."""
    per_step = {}
    per_layer = defaultdict(lambda: defaultdict(list))
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            step = int(row["step"])
            layer = int(row["layer_id"])
            per_step.setdefault(step, {
                "loss": float(row["loss"]),
                "metric": float(row["metric"]),
                "footprint_mb": float(row["footprint_mb"]),
                "pd": float(row["pd"]),
            })
            per_layer[layer]["step"].append(step)
            per_layer[layer]["grad_norm"].append(float(row["grad_norm"]))
            per_layer[layer]["sparsity"].append(float(row["sparsity"]))
            per_layer[layer]["d_bits"].append(
                int(row["d_bits"]) if row["d_bits"] else None)
    steps = sorted(per_step)
    return steps, per_step, per_layer


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report(run_dir: str):
    """Write figures into run_dir; returns the list of files created."""
    metrics_path = os.path.join(run_dir, "metrics.csv")
    if not os.path.exists(metrics_path):
        raise FileNotFoundError(f"no metrics.csv in {run_dir}")
    steps, per_step, per_layer = load_metrics(metrics_path)

    boundaries = []
    summary_path = os.path.join(run_dir, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        boundaries = [int(b) for b in summary.get("spike_verdicts", {})]

    created = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [per_step[s]["loss"] for s in steps])
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    created.append(_save(fig, run_dir, "loss.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [per_step[s]["metric"] for s in steps])
    ax.set_xlabel("step")
    ax.set_ylabel("task metric")
    created.append(_save(fig, run_dir, "metric.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    for layer in sorted(per_layer):
        series = per_layer[layer]
        if any(g > 0 for g in series["grad_norm"]):
            ax.plot(series["step"], series["grad_norm"], label=f"layer {layer}")
    for b in boundaries:
        ax.axvline(b, color="gray", linestyle="--", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("feature gradient norm")
    ax.set_yscale("log")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    created.append(_save(fig, run_dir, "grad_norms.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    for layer in sorted(per_layer):
        series = per_layer[layer]
        if any(s > 0 for s in series["sparsity"]):
            ax.plot(series["step"], series["sparsity"], label=f"layer {layer}")
    ax.set_xlabel("step")
    ax.set_ylabel("weight sparsity")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    created.append(_save(fig, run_dir, "sparsity.png"))

    return created
