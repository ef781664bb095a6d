"""Seeded synthetic corpus generator with exactly known ground truth.

Positives are dark spiky blobs; distractors are equally dark smooth ellipses
(so the classes only separate by shape); negatives are light ellipses. Slides
are mostly white with tissue islands confined to window ownership regions, so
the white-skip fraction is controlled exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Annotation, HpfImage, Point
from .dataio import save_rgb, write_annotation_csv, write_manifest
from .errors import DataError
from .infer import plan_tiles

KIND_POSITIVE = "positive"
KIND_DISTRACTOR = "distractor"
KIND_NEGATIVE = "negative"


@dataclass(frozen=True)
class SynthConfig:
    hpf_size: int = 384
    wsi_size: int = 2048
    positives_mean: float = 4.0          # Poisson mean per HPF
    positives_max: int = 8               # truncate the Poisson tail (placement cap)
    distractors_per_image: int = 5
    negatives_per_image: int = 3
    white_fraction: float = 0.7          # fraction of white slide windows
    min_separation: float = 64.0         # object center spacing, > 2 * match radius
    radius_range: tuple[float, float] = (8.0, 12.0)
    background_rgb: tuple[int, int, int] = (226, 208, 218)
    positive_rgb: tuple[int, int, int] = (88, 58, 106)
    distractor_rgb: tuple[int, int, int] = (92, 60, 108)
    negative_rgb: tuple[int, int, int] = (186, 158, 192)
    noise_std: float = 5.0
    case_tint_std: float = 7.0           # per-case stain-like RGB shift
    wsi_white_level: int = 250
    wsi_tissue_rgb: tuple[int, int, int] = (204, 182, 196)
    wsi_positives_total: int = 8
    wsi_distractors_total: int = 10
    wsi_negatives_total: int = 6
    wsi_window: int = 512
    wsi_overlap: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.min_separation <= 0 or self.radius_range[0] <= 0:
            raise DataError("separation and radii must be positive")
        if not (0.0 <= self.white_fraction <= 1.0):
            raise DataError("white_fraction must be in [0, 1]")


@dataclass(frozen=True)
class PlantedObject:
    kind: str
    row: int
    col: int
    radius: float


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _place_centers(rng: np.random.Generator, count: int, lo_r, hi_r, lo_c, hi_c,
                   min_sep: float, existing: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Rejection-sample centers with pairwise spacing against all placed objects."""
    placed = []
    occupied = np.array(existing, dtype=np.float64).reshape(-1, 2)
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise DataError("cannot place objects at the required separation")
        r = int(rng.integers(lo_r, hi_r + 1))
        c = int(rng.integers(lo_c, hi_c + 1))
        if occupied.size and np.min(np.hypot(occupied[:, 0] - r,
                                             occupied[:, 1] - c)) < min_sep:
            continue
        placed.append((r, c))
        occupied = np.vstack([occupied, [r, c]])
    return placed


def _paint_blob(canvas: np.ndarray, row: int, col: int, radius: float,
                color: np.ndarray, spiky: bool, rng: np.random.Generator) -> None:
    if spiky:
        n_spikes = int(rng.integers(6, 10))
        phase = rng.uniform(0, 2 * np.pi)
        inner, sharp = 0.45, 0.6
    else:
        n_spikes, phase = 0, 0.0
        tilt = rng.uniform(0, np.pi)
        ecc = rng.uniform(0.0, 0.35)
    reach = int(np.ceil(radius)) + 3
    r0, r1 = max(row - reach, 0), min(row + reach + 1, canvas.shape[0])
    c0, c1 = max(col - reach, 0), min(col + reach + 1, canvas.shape[1])
    yy, xx = np.mgrid[r0 - row:r1 - row, c0 - col:c1 - col]
    theta = np.arctan2(yy, xx)
    rho = np.hypot(yy, xx)
    if spiky:
        profile = (0.5 + 0.5 * np.cos(n_spikes * theta + phase)) ** sharp
        boundary = radius * (inner + (1.0 - inner) * profile)
    else:
        a, b = radius * (1.0 + ecc), radius * (1.0 - ecc)
        boundary = a * b / np.sqrt((b * np.cos(theta - tilt)) ** 2
                                   + (a * np.sin(theta - tilt)) ** 2)
    alpha = np.clip((boundary - rho) / 1.2, 0.0, 1.0)[..., None]
    jitter = rng.uniform(-5, 5, size=3)
    region = canvas[r0:r1, c0:c1]
    canvas[r0:r1, c0:c1] = region * (1 - alpha) + (color + jitter) * alpha


def _finalize(canvas: np.ndarray, rng: np.random.Generator, noise_std: float) -> np.ndarray:
    noisy = canvas + rng.normal(0.0, noise_std, canvas.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def synth_hpf(config: SynthConfig, seed, image_id: str = "hpf",
              case_id: str = "case",
              tint: np.ndarray | None = None) -> tuple[HpfImage, list[Annotation], list[PlantedObject]]:
    """Generate one labeled field; deterministic for a given seed."""
    rng = _rng(seed)
    size = config.hpf_size
    tint = np.zeros(3) if tint is None else np.asarray(tint, dtype=np.float64)
    canvas = np.tile(np.asarray(config.background_rgb, dtype=np.float64) + tint,
                     (size, size, 1))
    margin = int(np.ceil(config.radius_range[1])) + 4
    n_pos = min(int(rng.poisson(config.positives_mean)), config.positives_max)
    counts = [(KIND_POSITIVE, n_pos), (KIND_DISTRACTOR, config.distractors_per_image),
              (KIND_NEGATIVE, config.negatives_per_image)]
    colors = {KIND_POSITIVE: np.asarray(config.positive_rgb, dtype=np.float64) + tint,
              KIND_DISTRACTOR: np.asarray(config.distractor_rgb, dtype=np.float64) + tint,
              KIND_NEGATIVE: np.asarray(config.negative_rgb, dtype=np.float64) + tint}
    objects: list[PlantedObject] = []
    centers: list[tuple[int, int]] = []
    for kind, count in counts:
        for r, c in _place_centers(rng, count, margin, size - 1 - margin,
                                   margin, size - 1 - margin,
                                   config.min_separation, centers):
            centers.append((r, c))
            radius = float(rng.uniform(*config.radius_range))
            objects.append(PlantedObject(kind, r, c, radius))
    # Light negatives first, darks on top (they never overlap anyway).
    for obj in sorted(objects, key=lambda o: (o.kind != KIND_NEGATIVE, o.row, o.col)):
        _paint_blob(canvas, obj.row, obj.col, obj.radius, colors[obj.kind],
                    spiky=obj.kind == KIND_POSITIVE, rng=rng)
    pixels = _finalize(canvas, rng, config.noise_std)
    image = HpfImage(pixels, image_id, case_id)
    annotations = [Annotation(Point(o.row, o.col), case_id, image_id)
                   for o in objects if o.kind == KIND_POSITIVE]
    return image, annotations, objects


@dataclass
class SynthWsi:
    pixels: np.ndarray
    annotations: list[Annotation]
    objects: list[PlantedObject]
    tissue_windows: list[tuple[int, int]] = field(default_factory=list)


def _select_tissue_windows(rng: np.random.Generator, n_rows: int, n_cols: int,
                           count: int) -> list[tuple[int, int]]:
    """Pick windows pairwise >= 2 apart (Chebyshev) so white windows stay white.

    Sampling from the even sublattice guarantees the spacing, which caps the
    tissue count at ceil(rows/2) * ceil(cols/2) windows.
    """
    cells = [(i, j) for i in range(0, n_rows, 2) for j in range(0, n_cols, 2)]
    if count > len(cells):
        raise DataError(f"cannot place {count} tissue windows on a "
                        f"{n_rows}x{n_cols} grid with spacing 2")
    picked = [cells[k] for k in rng.choice(len(cells), size=count, replace=False)]
    return sorted(picked)


def synth_wsi(config: SynthConfig, seed,
              wsi_id: str = "wsi") -> SynthWsi:
    """Generate a mostly white slide with tissue islands and known mitoses.

    Tissue fills each selected window's ownership region, so the configured
    fraction of windows exceeds the white-skip threshold and every annotation
    lands in a non-white window.
    """
    rng = _rng(seed)
    size = config.wsi_size
    plan = plan_tiles(size, size, config.wsi_window, config.wsi_overlap)
    n_rows, n_cols = len(plan.row_origins), len(plan.col_origins)
    n_tissue = round((1.0 - config.white_fraction) * n_rows * n_cols)
    canvas = np.full((size, size, 3), float(config.wsi_white_level))
    tint = rng.normal(0.0, config.case_tint_std, size=3)

    tissue_cells = _select_tissue_windows(rng, n_rows, n_cols, n_tissue) if n_tissue else []
    tissue_rects = []
    for i, j in tissue_cells:
        r0, r1 = plan.row_bounds[i] + 2, plan.row_bounds[i + 1] - 2
        c0, c1 = plan.col_bounds[j] + 2, plan.col_bounds[j + 1] - 2
        tissue_rects.append((r0, r1, c0, c1))
        # Soft-edged tissue slab.
        edge_r = np.minimum(np.arange(r1 - r0) + 1, np.arange(r1 - r0)[::-1] + 1)
        edge_c = np.minimum(np.arange(c1 - c0) + 1, np.arange(c1 - c0)[::-1] + 1)
        alpha = np.clip(np.minimum(edge_r[:, None], edge_c[None, :]) / 3.0,
                        0.0, 1.0)[..., None]
        color = np.asarray(config.wsi_tissue_rgb, dtype=np.float64) + tint
        region = canvas[r0:r1, c0:c1]
        canvas[r0:r1, c0:c1] = region * (1 - alpha) + color * alpha

    objects: list[PlantedObject] = []
    if tissue_rects:
        colors = {KIND_POSITIVE: np.asarray(config.positive_rgb, dtype=np.float64) + tint,
                  KIND_DISTRACTOR: np.asarray(config.distractor_rgb, dtype=np.float64) + tint,
                  KIND_NEGATIVE: np.asarray(config.negative_rgb, dtype=np.float64) + tint}
        counts = [(KIND_POSITIVE, config.wsi_positives_total),
                  (KIND_DISTRACTOR, config.wsi_distractors_total),
                  (KIND_NEGATIVE, config.wsi_negatives_total)]
        inset = 24
        centers_by_rect: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(tissue_rects))}
        for kind, count in counts:
            for _ in range(count):
                ridx = int(rng.integers(0, len(tissue_rects)))
                r0, r1, c0, c1 = tissue_rects[ridx]
                placed = _place_centers(rng, 1, r0 + inset, r1 - 1 - inset,
                                        c0 + inset, c1 - 1 - inset,
                                        config.min_separation, centers_by_rect[ridx])
                centers_by_rect[ridx].extend(placed)
                r, c = placed[0]
                radius = float(rng.uniform(*config.radius_range))
                objects.append(PlantedObject(kind, r, c, radius))
                _paint_blob(canvas, r, c, radius, colors[kind],
                            spiky=kind == KIND_POSITIVE, rng=rng)

    pixels = _finalize(canvas, rng, 3.0)
    annotations = [Annotation(Point(o.row, o.col), wsi_id, wsi_id)
                   for o in objects if o.kind == KIND_POSITIVE]
    return SynthWsi(pixels, annotations, objects, tissue_cells)


def generate_corpus(out_dir: Path | str, config: SynthConfig,
                    train_cases: int = 10, hpfs_per_case: int = 4,
                    val_cases: int = 5, val_hpfs_per_case: int = 2,
                    wsis: int = 5) -> dict:
    """Write a complete train/val corpus: images, annotation CSVs, manifests.

    Case identity carries a stain-like tint so color variation exists across
    cases and slides. Returns summary counts.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    seed = config.seed

    def make_split(split: str, n_cases: int, per_case: int, case_offset: int,
                   wsi_entries: list[dict] | None):
        hpf_entries = []
        for ci in range(n_cases):
            case_id = f"{split}_case{case_offset + ci:02d}"
            tint_rng = _rng([seed, 1000 + case_offset + ci])
            tint = tint_rng.normal(0.0, config.case_tint_std, size=3)
            for hi in range(per_case):
                image_id = f"{case_id}_h{hi}"
                image, annotations, _ = synth_hpf(
                    config, [seed, 2000 + 100 * (case_offset + ci) + hi],
                    image_id, case_id, tint)
                save_rgb(image.pixels, out_dir / "images" / f"{image_id}.png")
                write_annotation_csv([a.point for a in annotations],
                                     out_dir / "annotations" / f"{image_id}.csv")
                hpf_entries.append({"case": case_id,
                                    "hpf": f"images/{image_id}.png",
                                    "annotations": f"annotations/{image_id}.csv"})
        write_manifest(out_dir / f"{split}.yaml", split, hpf_entries, wsi_entries)
        return hpf_entries

    wsi_entries = []
    gt_points: dict[str, list[Point]] = {}
    for wi in range(wsis):
        wsi_id = f"w{wi:02d}"
        slide = synth_wsi(config, [seed, 3000 + wi], wsi_id)
        save_rgb(slide.pixels, out_dir / "wsi" / f"{wsi_id}.png")
        write_annotation_csv([a.point for a in slide.annotations],
                             out_dir / "wsi" / f"{wsi_id}_gt.csv")
        gt_points[wsi_id] = [a.point for a in slide.annotations]
        wsi_entries.append({"wsi": f"wsi/{wsi_id}.png", "wsi_id": wsi_id})

    train_entries = make_split("train", train_cases, hpfs_per_case, 0, wsi_entries)
    val_entries = make_split("val", val_cases, val_hpfs_per_case, train_cases, None)
    return {"train_hpfs": len(train_entries), "val_hpfs": len(val_entries),
            "wsis": wsis, "wsi_gt": gt_points}
