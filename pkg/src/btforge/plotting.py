"""Report figures."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return path


def fitness_range_figure(per_generation: list, path: str):
    """Min-max band and mean of population fitness per generation."""
    gens = [g for g, _ in per_generation]
    lo = [min(v) for _, v in per_generation]
    hi = [max(v) for _, v in per_generation]
    mean = [sum(v) / len(v) for _, v in per_generation]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(gens, lo, hi, alpha=0.3, label="min-max")
    ax.plot(gens, mean, marker="o", ms=3, label="mean")
    ax.plot(gens, hi, lw=0.8, color="k", label="best")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def funnel_figure(rows: list, path: str):
    labels = [k for k, _ in rows]
    counts = [v for _, v in rows]
    fig, ax = plt.subplots(figsize=(5, 3))
    bars = ax.barh(labels[::-1], counts[::-1], color="tab:blue")
    for b, v in zip(bars, counts[::-1]):
        ax.text(b.get_width(), b.get_y() + b.get_height() / 2, f" {v}", va="center", fontsize=8)
    ax.set_xlabel("trees")
    return _save(fig, path)


def pruning_figure(rows: list, path: str):
    """Per-class counts through the pruning stages."""
    stages = ("initial", "tournament_rejected", "vote_removed", "final")
    classes = [r["class"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(stages)
    for i, s in enumerate(stages):
        xs = [j + i * width for j in range(len(classes))]
        ax.bar(xs, [int(r[s]) for r in rows], width, label=s.replace("_", " "))
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(classes))])
    ax.set_xticklabels(classes)
    ax.set_ylabel("trees")
    ax.legend(fontsize=8)
    return _save(fig, path)
