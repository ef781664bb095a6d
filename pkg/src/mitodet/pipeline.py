"""End-to-end orchestration: banks from manifests, training runs, inference, eval."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color import LabStats, lab_stats
from .config import PipelineConfig
from .core import (Annotation, Detection, HpfImage, PatchRecord, Point,
                   LABEL_MITOSIS, SET_FG_LAB, crop_centered)
from .dataio import DatasetManifest
from .errors import DataError
from .infer import extract_detections, plan_tiles, run_tiled
from .metrics import SweepResult, f1_score, match_detections, max_f1_sweep_pooled, case_stats
from .mine import hard_negative_mine
from .model import ScorerConfig
from .sampler import PatchBanks, register_bank, sample_bg_rand
from .trainer import TrainResult, train


@dataclass
class LabeledData:
    """Loaded labeled split: images, annotations and per-image LAB statistics."""

    images: list[HpfImage]
    annotations: dict[str, list[Annotation]]
    stats_pool: list[LabStats]

    @property
    def pairs(self) -> list[tuple[HpfImage, list[Annotation]]]:
        return [(img, self.annotations[img.image_id]) for img in self.images]


def load_labeled(manifest: DatasetManifest) -> LabeledData:
    images, annotations, stats = [], {}, []
    for entry in manifest.labeled:
        image = manifest.load_image(entry)
        images.append(image)
        annotations[image.image_id] = manifest.load_annotations(entry, image)
        stats.append(lab_stats(image.pixels))
    return LabeledData(images, annotations, stats)


def extract_fg_lab(data: LabeledData, patch_size: int) -> list[PatchRecord]:
    records = []
    for image in data.images:
        for ann in data.annotations[image.image_id]:
            pixels, center = crop_centered(image.pixels, ann.point, patch_size)
            records.append(PatchRecord(pixels, LABEL_MITOSIS, SET_FG_LAB,
                                       image.image_id, center))
    return records


def build_banks(data: LabeledData, config: PipelineConfig,
                fg_wsi: list[PatchRecord] | None = None) -> PatchBanks:
    """Assemble FG-Lab and BG-Rand banks (plus mined FG-WSI when provided)."""
    banks = PatchBanks()
    register_bank(banks, extract_fg_lab(data, config.patch_size))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([config.rng_seed, 17])))
    for image in data.images:
        register_bank(banks, sample_bg_rand(
            image, data.annotations[image.image_id], config.bg_rand_per_image,
            config.bg_rand_min_dist, config.patch_size, rng))
    if fg_wsi:
        register_bank(banks, list(fg_wsi))
    return banks


def run_training(data: LabeledData, config: PipelineConfig, scorer: ScorerConfig,
                 mode: str = "supervised",
                 fg_wsi: list[PatchRecord] | None = None,
                 on_iteration=None) -> TrainResult:
    """Train on a labeled split with hard-negative mining at the stage boundary."""
    banks = build_banks(data, config, fg_wsi)

    def mine_hard_negatives(params, _iteration):
        return hard_negative_mine(params, scorer, data.pairs, config)

    return train(banks, config, scorer, mode, hnm_callback=mine_hard_negatives,
                 stats_pool=data.stats_pool, on_iteration=on_iteration)


def detect_image(params: dict, scorer: ScorerConfig, pixels: np.ndarray,
                 config: PipelineConfig,
                 min_score: float | None = None) -> list[Detection]:
    """Tiled inference on one image, thresholded and NMS-filtered."""
    threshold = config.score_threshold if min_score is None else min_score
    plan = plan_tiles(pixels.shape[0], pixels.shape[1],
                      config.window_size, config.window_overlap)
    prob = run_tiled(params, pixels, plan, config, scorer)
    peaks = extract_detections(prob, threshold, config.nms_radius_final)
    return peaks.detections


def infer_manifest(params: dict, scorer: ScorerConfig, data: LabeledData,
                   config: PipelineConfig,
                   min_score: float | None = None) -> dict[str, list[Detection]]:
    return {image.image_id: detect_image(params, scorer, image.pixels, config, min_score)
            for image in data.images}


@dataclass
class EvalSummary:
    sweep: SweepResult
    f1_at_half: float
    precision_at_best: float
    recall_at_best: float
    per_case: list[tuple[str, float]]
    case_mean: float
    case_std: float
    num_images: int
    num_gt: int
    num_detections: int

    def to_dict(self) -> dict:
        return {
            "best_f1": self.sweep.best_f1,
            "best_threshold": self.sweep.best_threshold,
            "precision_at_best": self.precision_at_best,
            "recall_at_best": self.recall_at_best,
            "f1_at_0.5": self.f1_at_half,
            "case_mean_f1": self.case_mean,
            "case_std_f1": self.case_std,
            "per_case": {case: f1 for case, f1 in self.per_case},
            "num_images": self.num_images,
            "num_gt": self.num_gt,
            "num_detections": self.num_detections,
        }


def evaluate(detections_by_image: dict[str, list[Detection]], data: LabeledData,
             config: PipelineConfig) -> EvalSummary:
    """Pooled threshold sweep over all images plus case-level statistics.

    Case-level F1 is computed at the globally best threshold.
    """
    pairs = []
    by_case: dict[str, list[tuple[list[Detection], list[Point]]]] = {}
    num_gt = num_det = 0
    for image in data.images:
        dets = detections_by_image.get(image.image_id)
        if dets is None:
            raise DataError(f"no detections supplied for image {image.image_id!r}")
        gts = [a.point for a in data.annotations[image.image_id]]
        pairs.append((dets, gts))
        by_case.setdefault(image.case_id, []).append((dets, gts))
        num_gt += len(gts)
        num_det += len(dets)

    sweep = max_f1_sweep_pooled(pairs, config.match_radius)
    at_half = next((pt for pt in sweep.points if pt.threshold == 0.5), None)
    f1_at_half = at_half.f1 if at_half else 0.0
    best_pt = next(pt for pt in sweep.points if pt.threshold == sweep.best_threshold)

    per_case = []
    for case_id in sorted(by_case):
        tp = fp = fn = 0
        for dets, gts in by_case[case_id]:
            kept = [d for d in dets if d.score >= sweep.best_threshold]
            m = match_detections(kept, gts, config.match_radius)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        per_case.append((case_id, f1_score(p, r)))
    mean, std = case_stats([f1 for _, f1 in per_case])
    return EvalSummary(sweep, f1_at_half, best_pt.precision, best_pt.recall,
                       per_case, mean, std, len(data.images), num_gt, num_det)


def summary_text(summary: EvalSummary) -> str:
    lines = [
        "aggregate:",
        f"  images: {summary.num_images}",
        f"  ground_truth: {summary.num_gt}",
        f"  detections: {summary.num_detections}",
        f"  best_f1: {summary.sweep.best_f1:.6f}",
        f"  best_threshold: {summary.sweep.best_threshold:.6f}",
        f"  precision_at_best: {summary.precision_at_best:.6f}",
        f"  recall_at_best: {summary.recall_at_best:.6f}",
        f"  f1_at_0.5: {summary.f1_at_half:.6f}",
        f"  case_mean_f1: {summary.case_mean:.6f}",
        f"  case_std_f1: {summary.case_std:.6f}",
        "cases (f1 at best threshold):",
    ]
    lines += [f"  {case}: {f1:.6f}" for case, f1 in summary.per_case]
    return "\n".join(lines) + "\n"


def restrict_cases(data: LabeledData, case_ids: list[str]) -> LabeledData:
    keep = set(case_ids)
    images = [img for img in data.images if img.case_id in keep]
    if not images:
        raise DataError("case restriction leaves no images")
    idx = {img.image_id for img in images}
    stats = [s for img, s in zip(data.images, data.stats_pool) if img.image_id in idx]
    return LabeledData(images, {k: v for k, v in data.annotations.items() if k in idx},
                       stats)
