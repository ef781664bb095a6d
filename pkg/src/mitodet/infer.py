"""Memory-bounded tiled inference, stitching, peak extraction and radius NMS.

Stitching keeps each window's center region (ownership midpoints of the
overlaps), so every output cell is produced by exactly one window. Window
reads are extended to align window map cells with the whole-image stride grid;
together with the mirrored apron this makes tiled inference equal whole-image
inference exactly wherever the scorer's receptive field fits the margins.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .config import PipelineConfig
from .core import Detection, Point
from .dataio import ArrayRegionSource, read_region_mirrored
from .errors import DataError
from .model import ProbabilityMap, ScorerConfig, forward_dense, normalize_patches


@dataclass(frozen=True)
class TilePlan:
    """Window origins plus ownership boundaries for one image."""

    image_h: int
    image_w: int
    window: int
    overlap: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]
    row_bounds: tuple[int, ...]   # ownership pixel boundaries, len(origins) + 1
    col_bounds: tuple[int, ...]

    @property
    def num_windows(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    def windows(self):
        """Yield (index, row_origin, col_origin, owned pixel rect)."""
        idx = 0
        for i, r0 in enumerate(self.row_origins):
            for j, c0 in enumerate(self.col_origins):
                rect = (self.row_bounds[i], self.row_bounds[i + 1],
                        self.col_bounds[j], self.col_bounds[j + 1])
                yield idx, r0, c0, rect
                idx += 1


def _axis_origins(dim: int, window: int, stride: int) -> list[int]:
    if dim <= window:
        return [0]
    origins = []
    k = 0
    while True:
        o = k * stride
        if o + window >= dim:
            last = dim - window
            if not origins or origins[-1] != last:
                origins.append(last)
            return origins
        origins.append(o)
        k += 1


def _axis_bounds(origins: list[int], window: int, dim: int) -> list[int]:
    bounds = [0]
    for prev, cur in zip(origins, origins[1:]):
        bounds.append((cur + prev + window) // 2)
    bounds.append(dim)
    return bounds


def plan_tiles(image_h: int, image_w: int, window: int = 512,
               overlap: int = 120) -> TilePlan:
    """Plan overlapping windows covering the image.

    Origins advance by window - overlap; the last origin is clamped so the
    window ends at the image border, which only increases the overlap. Images
    smaller than the window get a single window of the image extent.
    """
    if image_h <= 0 or image_w <= 0:
        raise DataError(f"non-positive image dims {image_h}x{image_w}")
    if not (0 < overlap < window):
        raise DataError(f"need window > overlap > 0, got {window}, {overlap}")
    stride = window - overlap
    rows = _axis_origins(image_h, window, stride)
    cols = _axis_origins(image_w, window, stride)
    return TilePlan(image_h, image_w, window, overlap, tuple(rows), tuple(cols),
                    tuple(_axis_bounds(rows, window, image_h)),
                    tuple(_axis_bounds(cols, window, image_w)))


def _grid_cells(dim: int, pad: int, patch: int, stride: int) -> int:
    n = (dim + 2 * pad - patch) // stride + 1
    if n < 1:
        raise DataError(f"padded extent {dim + 2 * pad} smaller than patch {patch}")
    return n


def _upsample_axis(values: np.ndarray, origin: int, stride: int, size: int,
                   axis: int) -> np.ndarray:
    """Linear interpolation from grid cells to pixels along one axis, edge-clamped."""
    n = values.shape[axis]
    if n == 1:
        reps = [1] * values.ndim
        reps[axis] = size
        return np.tile(values, reps)
    src = origin + stride * np.arange(n)
    t = np.arange(size)
    i0 = np.clip(np.searchsorted(src, t, side="right") - 1, 0, n - 2)
    w = np.clip((t - src[i0]) / float(stride), 0.0, 1.0).astype(values.dtype)
    lo = np.take(values, i0, axis=axis)
    hi = np.take(values, i0 + 1, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = size
    w = w.reshape(shape)
    return lo * (1 - w) + hi * w


def upsample_to_pixels(values: np.ndarray, origin: tuple[int, int], stride: int,
                       image_h: int, image_w: int) -> np.ndarray:
    out = _upsample_axis(values, origin[0], stride, image_h, axis=0)
    return _upsample_axis(out, origin[1], stride, image_w, axis=1)


def run_whole(params: dict, image: np.ndarray, config: PipelineConfig,
              scorer: ScorerConfig) -> ProbabilityMap:
    """Single-pass reference: mirror-pad the whole image, score, upsample."""
    h, w = image.shape[:2]
    pad = config.pad
    padded = read_region_mirrored(image, -pad, -pad, h + 2 * pad, w + 2 * pad)
    dense = forward_dense(params, normalize_patches(padded), scorer)
    g0 = scorer.patch_size // 2 - pad
    pixels = upsample_to_pixels(dense.values, (g0, g0), dense.stride, h, w)
    return ProbabilityMap(pixels.astype(np.float32), 1, (0, 0))


def run_tiled(params: dict, source, plan: TilePlan, config: PipelineConfig,
              scorer: ScorerConfig,
              window_order: Sequence[int] | None = None) -> ProbabilityMap:
    """Tiled fully-convolutional inference over a large image.

    Each window is read with the mirrored apron (extended up to stride
    alignment), scored densely, and contributes exactly the stride-grid cells
    inside its ownership region. The stitched map is bilinearly upsampled to
    pixel resolution. Output is independent of window evaluation order.
    """
    if isinstance(source, np.ndarray):
        source = ArrayRegionSource(source, "<array>")
    h, w = plan.image_h, plan.image_w
    if source.height != h or source.width != w:
        raise DataError(f"plan is for {h}x{w}, source is "
                        f"{source.height}x{source.width}")
    p, s, pad = scorer.patch_size, scorer.output_stride, config.pad
    g0 = p // 2 - pad
    n_rows = _grid_cells(h, pad, p, s)
    n_cols = _grid_cells(w, pad, p, s)
    full = np.full((n_rows, n_cols), np.nan, dtype=np.float32)

    def cell_range(px_lo: int, px_hi: int, is_first: bool, is_last: bool,
                   n: int) -> tuple[int, int]:
        lo = 0 if is_first else -((g0 - px_lo) // s)      # ceil((px_lo - g0) / s)
        hi = n if is_last else -((g0 - px_hi) // s)
        return max(lo, 0), min(hi, n)

    windows = list(plan.windows())
    order = range(len(windows)) if window_order is None else window_order
    if sorted(order) != list(range(len(windows))):
        raise DataError("window_order must be a permutation of window indices")

    row_ext = min(plan.window, h)
    col_ext = min(plan.window, w)
    for wi in order:
        _, r0, c0, (own_r0, own_r1, own_c0, own_c1) = windows[wi]
        dr, dc = r0 % s, c0 % s
        try:
            block = read_region_mirrored(source, r0 - dr - pad, c0 - dc - pad,
                                         row_ext + dr + 2 * pad,
                                         col_ext + dc + 2 * pad)
            dense = forward_dense(params, normalize_patches(block), scorer)
        except Exception as exc:
            raise DataError(f"window at ({r0},{c0}) failed: {exc}") from exc
        base_k_r = (r0 - dr) // s
        base_k_c = (c0 - dc) // s
        k_r0, k_r1 = cell_range(own_r0, own_r1, own_r0 == 0, own_r1 == h, n_rows)
        k_c0, k_c1 = cell_range(own_c0, own_c1, own_c0 == 0, own_c1 == w, n_cols)
        vals = dense.values[k_r0 - base_k_r:k_r1 - base_k_r,
                            k_c0 - base_k_c:k_c1 - base_k_c]
        full[k_r0:k_r1, k_c0:k_c1] = vals

    if np.isnan(full).any():
        raise DataError("stitching left unassigned cells")  # ownership bug guard
    pixels = upsample_to_pixels(full, (g0, g0), s, h, w)
    return ProbabilityMap(pixels.astype(np.float32), 1, (0, 0))


@dataclass
class PeakSet:
    """Detections surviving thresholding and radius NMS."""

    detections: list[Detection]
    image_shape: tuple[int, int]
    threshold: float
    nms_radius: float


def radius_nms(detections: list[Detection], radius: float) -> list[Detection]:
    """Greedy radius NMS: keep a detection iff it is farther than ``radius``
    from every higher-scored kept detection (ties break on row, then col)."""
    if radius <= 0:
        raise DataError(f"nms radius must be positive, got {radius}")
    order = sorted(detections, key=lambda d: (-d.score, d.point.row, d.point.col))
    kept: list[Detection] = []
    rows = np.empty(len(order))
    cols = np.empty(len(order))
    r2 = float(radius) ** 2
    for det in order:
        n = len(kept)
        if n:
            d2 = (rows[:n] - det.point.row) ** 2 + (cols[:n] - det.point.col) ** 2
            if d2.min() <= r2:
                continue
        rows[n] = det.point.row
        cols[n] = det.point.col
        kept.append(det)
    return kept


def extract_detections(prob_map: ProbabilityMap, threshold: float = 0.5,
                       nms_radius: float = 30.0) -> PeakSet:
    """Threshold a pixel-resolution probability map and apply radius NMS."""
    if prob_map.stride != 1:
        raise DataError("extract_detections needs a pixel-resolution map")
    values = prob_map.values
    rr, cc = np.nonzero(values >= threshold)
    candidates = [Detection(Point(int(r) + prob_map.origin[0],
                                  int(c) + prob_map.origin[1]),
                            float(np.clip(values[r, c], 0.0, 1.0)))
                  for r, c in zip(rr, cc)]
    kept = radius_nms(candidates, nms_radius)
    return PeakSet(kept, values.shape, threshold, nms_radius)


def save_probability_png16(prob_map: ProbabilityMap, path: Path | str) -> None:
    """Dump a probability map as a 16-bit grayscale PNG for inspection."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    scaled = np.round(np.clip(prob_map.values, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(scaled, mode="I;16").save(path)
