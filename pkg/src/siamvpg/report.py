"""Figure rendering for evaluation reports, training logs, and inspection
dumps. Figures land next to the JSON/CSV outputs they illustrate."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .compose import PseudoComposition
from .evaluation import EvalReport


def eval_figures(report: EvalReport, out_dir: Path | str) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []

    thresholds = sorted(report.recalls)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([f"R@{m:g}" for m in thresholds], [report.recalls[m] for m in thresholds],
           color="steelblue")
    ax.axhline(report.miou, color="firebrick", linestyle="--",
               label=f"mIoU = {report.miou:.3f}")
    ax.set_ylim(0, 1)
    ax.set_ylabel("fraction of sentences")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "recall.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    ious = [v for rec in report.per_sample for v in rec.ious]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ious, bins=np.linspace(0, 1, 21), color="steelblue", edgecolor="white")
    ax.set_xlabel("per-sentence IoU")
    ax.set_ylabel("count")
    fig.tight_layout()
    path = out_dir / "iou_hist.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def eval_csv(report: EvalReport, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "sentence_index", "iou"])
        for rec in report.per_sample:
            for j, value in enumerate(rec.ious):
                writer.writerow([rec.video_id, j, f"{value:.6f}"])


def training_curve(log_rows: list[dict], out_path: Path | str) -> None:
    if not log_rows:
        return
    steps = [row["step"] for row in log_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("total", "screg", "oga", "csc", "pa"):
        ax.plot(steps, [row[key] for row in log_rows], label=key, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(ncol=3, fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def decode_csv(rows: list[dict], path: Path | str) -> None:
    """Per (layer, query) anchors and attention centroids."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "query", "start", "end", "centroid_clip"])
        for row in rows:
            writer.writerow([
                row["layer"], row["query"],
                f"{row['start']:.6f}", f"{row['end']:.6f}",
                f"{row['centroid_clip']:.4f}",
            ])


def decode_figure(rows: list[dict], out_path: Path | str) -> None:
    queries = sorted({row["query"] for row in rows})
    layers = sorted({row["layer"] for row in rows})
    fig, ax = plt.subplots(figsize=(6, 0.8 + 0.5 * len(layers) * len(queries)))
    colors = plt.cm.tab10(np.linspace(0, 1, max(len(queries), 2)))
    y = 0
    yticks, ylabels = [], []
    for layer in layers:
        for q in queries:
            row = next(r for r in rows if r["layer"] == layer and r["query"] == q)
            ax.barh(y, row["end"] - row["start"], left=row["start"], height=0.6,
                    color=colors[q % len(colors)], alpha=0.75)
            yticks.append(y)
            ylabels.append(f"L{layer} q{q}")
            y += 1
    ax.set_yticks(yticks)
    ax.set_yticklabels(ylabels, fontsize=7)
    ax.set_xlim(0, 1)
    ax.set_xlabel("normalized time")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def compose_figure(comp: PseudoComposition, out_path: Path | str) -> None:
    iv = comp.pseudo_interval
    fig, ax = plt.subplots(figsize=(6, 1.8))
    ax.barh(0, 1.0, left=0.0, height=0.5, color="lightgray", label="pseudo video")
    ax.barh(0, iv.length, left=iv.start, height=0.5, color="steelblue",
            label="labeled interval")
    ax.set_xlim(0, 1)
    ax.set_yticks([])
    ax.set_xlabel("normalized time")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
