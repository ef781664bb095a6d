"""Hard-negative mining from labeled fields and mitosis mining from slides."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .core import (Annotation, Detection, HpfImage, PatchRecord, Point,
                   LABEL_BACKGROUND, LABEL_MITOSIS, SET_BG_HARD, SET_FG_WSI,
                   crop_centered)
from .dataio import read_region_mirrored
from .errors import DataError
from .infer import extract_detections, plan_tiles, run_tiled, upsample_to_pixels
from .model import ProbabilityMap, ScorerConfig, forward_dense, normalize_patches


@dataclass(frozen=True)
class TtaTransform:
    """One of the 8 dihedral transforms: optional horizontal flip, then
    ``rot_k`` counter-clockwise quarter turns."""

    rot_k: int
    flip: bool

    def apply_pixels(self, a: np.ndarray) -> np.ndarray:
        if self.flip:
            a = a[:, ::-1]
        if self.rot_k:
            a = np.rot90(a, self.rot_k)
        return a

    def apply_point(self, row: float, col: float, h: int, w: int) -> tuple[float, float]:
        if self.flip:
            col = w - 1 - col
        for _ in range(self.rot_k % 4):
            row, col, h, w = w - 1 - col, row, w, h
        return row, col

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return (w, h) if self.rot_k % 2 else (h, w)

    def inverse(self) -> "TtaTransform":
        # Reflections are involutions; pure rotations invert to 4 - k turns.
        return self if self.flip else TtaTransform((4 - self.rot_k) % 4, False)


TTA_TRANSFORMS: tuple[TtaTransform, ...] = tuple(
    TtaTransform(k, f) for f in (False, True) for k in range(4))


def tta_consensus(scores, keep_threshold: float) -> bool:
    """Keep a candidate iff its score under every transform clears the bar."""
    scores = list(scores)
    if len(scores) != len(TTA_TRANSFORMS):
        raise DataError(f"expected {len(TTA_TRANSFORMS)} transform scores, "
                        f"got {len(scores)}")
    return min(scores) >= keep_threshold


def hard_negative_mine(params: dict, scorer: ScorerConfig,
                       labeled: list[tuple[HpfImage, list[Annotation]]],
                       config: PipelineConfig) -> list[PatchRecord]:
    """Collect BG-Hard patches at the model's false positives on labeled fields.

    Detections are extracted at the score threshold with the wide mining NMS
    radius; any detection with no annotation within match_radius becomes a
    background patch centered there (window clamped inside the image).
    """
    if not labeled:
        raise DataError("no labeled images to mine")
    records: list[PatchRecord] = []
    for image, annotations in labeled:
        h, w = image.shape
        plan = plan_tiles(h, w, config.window_size, config.window_overlap)
        prob = run_tiled(params, image.pixels, plan, config, scorer)
        peaks = extract_detections(prob, config.score_threshold, config.nms_radius_hnm)
        gt = np.array([[a.point.row, a.point.col] for a in annotations],
                      dtype=np.float64).reshape(-1, 2)
        for det in peaks.detections:
            if gt.size:
                d = np.hypot(gt[:, 0] - det.point.row, gt[:, 1] - det.point.col)
                if d.min() <= config.match_radius:
                    continue
            pixels, center = crop_centered(image.pixels, det.point, config.patch_size)
            records.append(PatchRecord(pixels, LABEL_BACKGROUND, SET_BG_HARD,
                                       image.image_id, center))
    return records


@dataclass
class MiningReport:
    """Bookkeeping for one slide-mining run."""

    wsi_id: str
    windows_total: int = 0
    windows_skipped_white: int = 0
    windows_skipped_low_score: int = 0
    candidates_before_consensus: int = 0
    patches_kept: int = 0
    score_vectors: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        counts = (self.windows_total, self.windows_skipped_white,
                  self.windows_skipped_low_score, self.candidates_before_consensus,
                  self.patches_kept)
        if any(c < 0 for c in counts):
            raise DataError("negative mining counts")
        if self.patches_kept > self.candidates_before_consensus:
            raise DataError("kept more patches than candidates")
        if self.windows_skipped_white + self.windows_skipped_low_score > self.windows_total:
            raise DataError("skipped more windows than processed")

    def to_dict(self) -> dict:
        return {"wsi_id": self.wsi_id,
                "windows_total": self.windows_total,
                "windows_skipped_white": self.windows_skipped_white,
                "windows_skipped_low_score": self.windows_skipped_low_score,
                "candidates_before_consensus": self.candidates_before_consensus,
                "patches_kept": self.patches_kept,
                "score_vectors": self.score_vectors}

    @classmethod
    def from_dict(cls, d: dict) -> "MiningReport":
        report = cls(**d)
        report.validate()
        return report


def save_report(report: MiningReport, path: Path | str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_report(path: Path | str) -> MiningReport:
    return MiningReport.from_dict(json.loads(Path(path).read_text()))


def _transform_score(block: np.ndarray, params: dict, scorer: ScorerConfig,
                     transform: TtaTransform, maps_cache: dict) -> np.ndarray:
    if transform not in maps_cache:
        pixels = np.ascontiguousarray(transform.apply_pixels(block))
        maps_cache[transform] = forward_dense(params, normalize_patches(pixels), scorer)
    return maps_cache[transform]


def scan_wsi(params: dict, scorer: ScorerConfig, source,
             config: PipelineConfig) -> tuple[list[PatchRecord], MiningReport]:
    """Mine mitosis patches from an unlabeled slide with TTA consensus.

    Windows whose mean RGB exceeds the white-skip threshold are skipped; the
    remaining windows are scored once, and only windows whose peak clears the
    first-pass threshold are evaluated under all 8 dihedral transforms.
    Candidates are taken from each window's ownership region, so overlapping
    windows cannot yield duplicates and processing order does not matter.
    """
    wsi_id = getattr(source, "wsi_id", "<wsi>")
    h, w = source.height, source.width
    plan = plan_tiles(h, w, config.window_size, config.window_overlap)
    report = MiningReport(wsi_id=wsi_id, windows_total=plan.num_windows)
    pad = config.pad
    p = scorer.patch_size
    s = scorer.output_stride
    row_ext = min(plan.window, h)
    col_ext = min(plan.window, w)
    kept: list[tuple[tuple, PatchRecord]] = []

    for _, r0, c0, (own_r0, own_r1, own_c0, own_c1) in plan.windows():
        window_pixels = source.read_region(r0, c0, row_ext, col_ext)
        if window_pixels.mean() > config.wsi_skip_mean_rgb:
            report.windows_skipped_white += 1
            continue
        block = read_region_mirrored(source, r0 - pad, c0 - pad,
                                     row_ext + 2 * pad, col_ext + 2 * pad)
        maps_cache: dict = {}
        identity = TTA_TRANSFORMS[0]
        id_map = _transform_score(block, params, scorer, identity, maps_cache)
        if float(id_map.values.max()) < config.wsi_first_pass_threshold:
            report.windows_skipped_low_score += 1
            continue

        # Candidates from the identity map, restricted to owned pixels.
        g0 = p // 2 - pad
        pixel_vals = _window_pixel_map(id_map, row_ext, col_ext, g0)
        masked = np.zeros_like(pixel_vals)
        sl = (slice(own_r0 - r0, own_r1 - r0), slice(own_c0 - c0, own_c1 - c0))
        masked[sl] = pixel_vals[sl]
        peaks = extract_detections(ProbabilityMap(masked, 1, (0, 0)),
                                   config.wsi_first_pass_threshold,
                                   config.nms_radius_final)
        if not peaks.detections:
            continue
        report.candidates_before_consensus += len(peaks.detections)

        bh, bw = block.shape[:2]
        for det in peaks.detections:
            rb = det.point.row + pad   # window-local -> block frame
            cb = det.point.col + pad
            scores = []
            for transform in TTA_TRANSFORMS:
                tmap = _transform_score(block, params, scorer, transform, maps_cache)
                tr, tc = transform.apply_point(rb, cb, bh, bw)
                j_r = int(np.clip(round((tr - tmap.origin[0]) / tmap.stride),
                                  0, tmap.values.shape[0] - 1))
                j_c = int(np.clip(round((tc - tmap.origin[1]) / tmap.stride),
                                  0, tmap.values.shape[1] - 1))
                scores.append(float(tmap.values[j_r, j_c]))
            if not tta_consensus(scores, config.tta_keep_threshold):
                continue
            center = Point(r0 + det.point.row, c0 + det.point.col)
            pixels, center = _read_patch(source, center, config.patch_size)
            rec = PatchRecord(pixels, LABEL_MITOSIS, SET_FG_WSI, wsi_id, center)
            kept.append(((wsi_id, center.row, center.col), rec))
            report.score_vectors.append({
                "wsi_id": wsi_id, "row": center.row, "col": center.col,
                "scores": [round(v, 6) for v in scores]})

    kept.sort(key=lambda item: item[0])
    report.score_vectors.sort(key=lambda v: (v["wsi_id"], v["row"], v["col"]))
    report.patches_kept = len(kept)
    report.validate()
    return [rec for _, rec in kept], report


def _window_pixel_map(dense, row_ext: int, col_ext: int, g0: int) -> np.ndarray:
    return upsample_to_pixels(dense.values, (g0, g0), dense.stride, row_ext, col_ext)


def _read_patch(source, center: Point, size: int) -> tuple[np.ndarray, Point]:
    half = size // 2
    r0 = min(max(center.row - half, 0), source.height - size)
    c0 = min(max(center.col - half, 0), source.width - size)
    return source.read_region(r0, c0, size, size), Point(r0 + half, c0 + half)
