"""Matching-based detection metrics: greedy matching, P/R/F1, threshold sweeps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Detection, Point
from .errors import DataError


@dataclass
class MatchResult:
    """One-to-one matching of detections to ground truth within a radius."""

    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]]   # (detection index, GT index)

    def __post_init__(self):
        if self.tp != len(self.pairs) or min(self.tp, self.fp, self.fn) < 0:
            raise DataError("inconsistent match counts")


def match_detections(detections: list[Detection], gts: list[Point],
                     radius: float = 30.0) -> MatchResult:
    """Greedily match detections (descending score) to unmatched ground truth.

    A detection pairs with the nearest still-unmatched GT within ``radius``
    (boundary inclusive); leftover detections are FPs, leftover GTs are FNs.
    Ties break deterministically: detections on (row, col), GTs on index.
    """
    if radius <= 0:
        raise DataError(f"match radius must be positive, got {radius}")
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, detections[i].point.row,
                                  detections[i].point.col))
    gt = np.array([[p.row, p.col] for p in gts], dtype=np.float64).reshape(-1, 2)
    unmatched = np.ones(len(gts), dtype=bool)
    pairs = []
    for det_idx in order:
        if not unmatched.any():
            break
        point = detections[det_idx].point
        d = np.hypot(gt[:, 0] - point.row, gt[:, 1] - point.col)
        d[~unmatched] = np.inf
        best = int(np.argmin(d))          # first minimum = smallest GT index
        if d[best] <= radius:
            unmatched[best] = False
            pairs.append((det_idx, best))
    tp = len(pairs)
    return MatchResult(tp, len(detections) - tp, len(gts) - tp, pairs)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf(match: MatchResult) -> tuple[float, float, float]:
    """Precision, recall, F1; zero by convention when a denominator is zero."""
    p = match.tp / (match.tp + match.fp) if match.tp + match.fp else 0.0
    r = match.tp / (match.tp + match.fn) if match.tp + match.fn else 0.0
    return p, r, f1_score(p, r)


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


@dataclass
class SweepResult:
    best_f1: float
    best_threshold: float
    points: list[PrPoint]


def _sweep_thresholds(all_scores) -> list[float]:
    return sorted(set(all_scores) | {0.5})


def max_f1_sweep(detections: list[Detection], gts: list[Point],
                 radius: float = 30.0) -> SweepResult:
    """Sweep score thresholds and report the best F1 and the full PR curve.

    Thresholds are the distinct detection scores (0.5 is always included);
    the lowest threshold attaining the maximum F1 wins.
    """
    return max_f1_sweep_pooled([(detections, gts)], radius)


def max_f1_sweep_pooled(pairs: list[tuple[list[Detection], list[Point]]],
                        radius: float = 30.0) -> SweepResult:
    """Threshold sweep with TP/FP/FN pooled over (detections, GT) pairs."""
    thresholds = _sweep_thresholds(
        d.score for dets, _ in pairs for d in dets)
    points = []
    best_f1, best_threshold = -1.0, 0.5
    for threshold in thresholds:
        tp = fp = fn = 0
        for dets, gts in pairs:
            kept = [d for d in dets if d.score >= threshold]
            m = match_detections(kept, gts, radius)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = f1_score(p, r)
        points.append(PrPoint(threshold, p, r, f1))
        if f1 > best_f1:
            best_f1, best_threshold = f1, threshold
    return SweepResult(max(best_f1, 0.0), best_threshold, points)


def case_stats(values: list[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    if not values:
        raise DataError("no case values")
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def write_pr_csv(points: list[PrPoint], path: Path | str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f1"])
        for pt in points:
            writer.writerow([f"{pt.threshold:.6f}", f"{pt.precision:.6f}",
                             f"{pt.recall:.6f}", f"{pt.f1:.6f}"])


def read_pr_csv(path: Path | str) -> list[PrPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["threshold", "precision", "recall", "f1"]:
        raise DataError(f"{path}: not a PR curve file")
    return [PrPoint(*(float(v) for v in row)) for row in rows[1:]]
