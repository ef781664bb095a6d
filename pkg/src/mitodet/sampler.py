"""Patch banks and fixed-ratio batch assembly across training stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, spatial_augment
from .color import LabStats, contrast_transfer
from .config import PipelineConfig
from .core import (Annotation, HpfImage, PatchRecord, Point, LABEL_BACKGROUND,
                   SET_BG_HARD, SET_BG_RAND, SET_FG_LAB, SET_FG_WSI)
from .errors import DataError

_BANK_ATTR = {SET_BG_RAND: "bg_rand", SET_BG_HARD: "bg_hard",
              SET_FG_LAB: "fg_lab", SET_FG_WSI: "fg_wsi"}


@dataclass
class PatchBanks:
    """The four patch sets feeding the trainer; append-only."""

    bg_rand: list[PatchRecord] = field(default_factory=list)
    bg_hard: list[PatchRecord] = field(default_factory=list)
    fg_lab: list[PatchRecord] = field(default_factory=list)
    fg_wsi: list[PatchRecord] = field(default_factory=list)

    def bank_for(self, set_tag: str) -> list[PatchRecord]:
        try:
            return getattr(self, _BANK_ATTR[set_tag])
        except KeyError:
            raise DataError(f"unknown patch set tag {set_tag!r}")

    def sizes(self) -> dict[str, int]:
        return {tag: len(self.bank_for(tag)) for tag in _BANK_ATTR}


def register_bank(banks: PatchBanks, records: list[PatchRecord]) -> PatchBanks:
    """Append records to the banks matching their set tags (validated)."""
    for rec in records:
        # PatchRecord enforces label/set consistency at construction; re-check
        # here so corrupted records cannot slip in through mutation.
        if rec.set not in _BANK_ATTR:
            raise DataError(f"unknown patch set tag {rec.set!r}")
        expected = LABEL_BACKGROUND if rec.set in (SET_BG_RAND, SET_BG_HARD) else "mitosis"
        if rec.label != expected:
            raise DataError(f"patch set {rec.set} inconsistent with label {rec.label}")
        banks.bank_for(rec.set).append(rec)
    return banks


@dataclass(frozen=True)
class StagePlan:
    """Which banks feed which iteration span."""

    stage: str                       # "stage1" | "stage2"
    bg_source: str                   # SET_BG_RAND or SET_BG_HARD (with fallback)
    fg_sources: tuple[tuple[str, int], ...]   # (set tag, mix weight)
    span: tuple[int, int]            # [start, end) iterations


def stage_plans(config: PipelineConfig, mode: str) -> tuple[StagePlan, StagePlan]:
    if mode == "supervised":
        fg = ((SET_FG_LAB, 1),)
    elif mode == "semi_supervised":
        fg = ((SET_FG_LAB, config.fg_mix_lab), (SET_FG_WSI, config.fg_mix_wsi))
    else:
        raise DataError(f"unknown training mode {mode!r}")
    boundary = config.hnm_iteration
    total = config.total_iterations
    return (StagePlan("stage1", SET_BG_RAND, fg, (0, boundary)),
            StagePlan("stage2", SET_BG_HARD, fg, (boundary, total)))


def sample_bg_rand(image: HpfImage, annotations: list[Annotation], count: int,
                   min_dist: float, patch_size: int,
                   rng: np.random.Generator) -> list[PatchRecord]:
    """Uniformly sample background patch centers away from mitoses and each other.

    Rejection sampling; gives up after 1000 * count proposals and returns
    whatever was accepted by then.
    """
    h, w = image.shape
    if h < patch_size or w < patch_size:
        raise DataError(f"image {image.image_id!r} ({h}x{w}) smaller than patch "
                        f"size {patch_size}")
    keep_out = np.array([[a.point.row, a.point.col] for a in annotations],
                        dtype=np.float64).reshape(-1, 2)
    accepted: list[PatchRecord] = []
    centers = np.empty((0, 2))
    half = patch_size // 2
    limit = 1000 * count
    proposals = 0
    while len(accepted) < count and proposals < limit:
        proposals += 1
        r0 = int(rng.integers(0, h - patch_size + 1))
        c0 = int(rng.integers(0, w - patch_size + 1))
        center = np.array([r0 + half, c0 + half], dtype=np.float64)
        if keep_out.size and np.min(np.hypot(*(keep_out - center).T)) < min_dist:
            continue
        if centers.size and np.min(np.hypot(*(centers - center).T)) < min_dist:
            continue
        centers = np.vstack([centers, center])
        pixels = np.ascontiguousarray(image.pixels[r0:r0 + patch_size,
                                                   c0:c0 + patch_size])
        accepted.append(PatchRecord(pixels, LABEL_BACKGROUND, SET_BG_RAND,
                                    image.image_id, Point(r0 + half, c0 + half)))
    return accepted


def _draw(bank: list[PatchRecord], n: int, rng: np.random.Generator) -> list[PatchRecord]:
    idx = rng.integers(0, len(bank), size=n)
    return [bank[i] for i in idx]


def assemble_batch(banks: PatchBanks, plan: StagePlan, config: PipelineConfig,
                   rng: np.random.Generator,
                   policy: AugmentPolicy | None = None,
                   stats_pool: list[LabStats] | None = None) -> list[PatchRecord]:
    """Draw one fixed-ratio training batch and augment it.

    Foreground slots alternate between the plan's sources at their mix ratio;
    backgrounds come from the plan's source, with stage 2 falling back to
    BG-Rand while BG-Hard holds fewer than a full batch. Sampling is with
    replacement.
    """
    if not banks.fg_lab:
        raise DataError("fg_lab bank is empty")
    fg_sources = [(tag, weight) for tag, weight in plan.fg_sources
                  if weight > 0 and banks.bank_for(tag)]
    if not fg_sources:
        raise DataError("no usable foreground bank for this plan")

    bg_bank = banks.bank_for(plan.bg_source)
    if plan.bg_source == SET_BG_HARD and len(bg_bank) < config.batch_size:
        bg_bank = banks.bg_rand
    if not bg_bank:
        raise DataError("both background banks are empty")

    weights = np.array([w for _, w in fg_sources], dtype=np.float64)
    weights /= weights.sum()
    fg: list[PatchRecord] = []
    for _ in range(config.batch_fg):
        tag = fg_sources[rng.choice(len(fg_sources), p=weights)][0]
        fg.extend(_draw(banks.bank_for(tag), 1, rng))
    records = fg + _draw(bg_bank, config.batch_bg, rng)

    if policy is None:
        return records
    out = []
    for rec in records:
        rec = spatial_augment(rec, policy, rng)
        if stats_pool and policy.contrast_transfer_prob > 0 \
                and rng.random() < policy.contrast_transfer_prob:
            target = stats_pool[int(rng.integers(0, len(stats_pool)))]
            rec = PatchRecord(contrast_transfer(rec.pixels, target), rec.label,
                              rec.set, rec.source_id, rec.center)
        out.append(rec)
    return out
