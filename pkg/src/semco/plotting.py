"""Figures for pseudo-labelling statistics and training curves (file output only)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

HEADS = {"sc": "semantic head", "oh": "one-hot head"}


def _series(rows, split, metric, cls=""):
    pts = sorted((r["epoch"], r["value"]) for r in rows
                 if r["split"] == split and r["metric"] == metric and r["class"] == cls)
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_pseudo_stats(rows, classes, out_dir, head="sc") -> Path:
    """Per-class pseudo-label accuracy and retention ratio over epochs for one head."""
    out = Path(out_dir) / f"pl_stats_{head}.png"
    fig, (ax_acc, ax_ratio) = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    for cls in classes:
        ax_acc.plot(*_series(rows, "unlabeled", f"pl_accuracy_{head}", cls), marker="o", ms=3, label=cls)
        ax_ratio.plot(*_series(rows, "unlabeled", f"pl_ratio_{head}", cls), marker="o", ms=3, label=cls)
    for ax, title in ((ax_acc, "accuracy"), (ax_ratio, "ratio")):
        ax.set_title(f"{HEADS.get(head, head)}: pseudo-label {title}")
        ax.set_xlabel("epoch")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    ax_ratio.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def plot_training_curves(rows, out_dir) -> Path:
    out = Path(out_dir) / "curves.png"
    fig, (ax_err, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    for metric, label in (("error", "one-hot head"), ("error_sc", "semantic head")):
        ax_err.plot(*_series(rows, "test", metric), label=label)
    ax_err.set_title("test error (EMA weights)")
    losses = sorted({r["metric"] for r in rows if r["split"] == "train" and r["metric"].startswith("l")})
    for metric in losses:
        ax_loss.plot(*_series(rows, "train", metric), label=metric)
    ax_loss.plot(*_series(rows, "train", "total"), label="total", color="k")
    ax_loss.set_title("training losses (epoch mean)")
    for ax in (ax_err, ax_loss):
        ax.set_xlabel("epoch")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def plot_disagreement(rows, classes, out_dir) -> Path:
    out = Path(out_dir) / "disagreement.png"
    fig, ax = plt.subplots(figsize=(5, 4))
    for cls in classes:
        ax.plot(*_series(rows, "unlabeled", "disagreement", cls), marker="o", ms=3, label=cls)
    ax.set_title("co-confident samples with conflicting labels")
    ax.set_xlabel("epoch")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=100)
    plt.close(fig)
    return out


def render_all(rows, classes, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        return []
    paths = [plot_pseudo_stats(rows, classes, out_dir, h) for h in HEADS]
    paths.append(plot_disagreement(rows, classes, out_dir))
    paths.append(plot_training_curves(rows, out_dir))
    return paths


def stats_table(rows, classes=None) -> tuple[list[str], list[list]]:
    """Per epoch, class and head: retention ratio, accuracy and disagreement."""
    header = ["epoch", "class", "head", "ratio", "accuracy", "group_accuracy", "disagreement"]
    cells = defaultdict(dict)
    seen_classes = []
    for r in rows:
        if r["split"] != "unlabeled" or not r["class"]:
            continue
        if r["class"] not in seen_classes:
            seen_classes.append(r["class"])
        cells[(r["epoch"], r["class"])][r["metric"]] = r["value"]
    classes = list(classes) if classes else seen_classes
    table = []
    for epoch in sorted({e for e, _ in cells}):
        for cls in classes:
            vals = cells.get((epoch, cls))
            if vals is None:
                continue
            for head in HEADS:
                table.append([
                    epoch, cls, head,
                    vals.get(f"pl_ratio_{head}"),
                    vals.get(f"pl_accuracy_{head}"),
                    vals.get(f"pl_group_accuracy_{head}"),
                    vals.get("disagreement"),
                ])
    return header, table
