"""Matplotlib figure rendering for the delimited outputs (deterministic SVG)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PrPoint  # noqa: E402
from .trainer import TraceRow  # noqa: E402

# Stable hash salt keeps SVG element ids reproducible run to run.
matplotlib.rcParams["svg.hashsalt"] = "mitodet"


def _save(fig, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def render_pr_curve(points: list[PrPoint], path: Path | str,
                    title: str = "precision-recall") -> None:
    pts = sorted(points, key=lambda p: p.recall)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot([p.recall for p in pts], [p.precision for p in pts], "-o", ms=2.5)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def render_training_trace(trace: list[TraceRow], path: Path | str) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.5, 4.5), sharex=True)
    its = [row.iteration for row in trace]
    ax1.plot(its, [row.loss for row in trace], lw=0.8)
    ax1.set_ylabel("loss")
    ax1.grid(alpha=0.3)
    ax2.plot(its, [row.lr for row in trace], lw=1.0, drawstyle="steps-post")
    ax2.set_yscale("log")
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("iteration")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_datasize(rows: list[tuple[float, float]], path: Path | str) -> None:
    """rows: (training fraction, max F1)."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot([f for f, _ in rows], [v for _, v in rows], "-o")
    ax.set_xlabel("training set fraction")
    ax.set_ylabel("max F1")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
