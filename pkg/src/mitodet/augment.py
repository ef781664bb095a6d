"""Spatial and photometric training augmentation for patches."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import PatchRecord


@dataclass(frozen=True)
class AugmentPolicy:
    """Augmentation switches applied to every sampled training patch."""

    flip_prob: float = 0.5
    rot90_uniform: bool = True
    jitter_translate_px: int = 8
    jitter_intensity: int = 10
    contrast_transfer_prob: float = 0.5

    def __post_init__(self):
        for name in ("flip_prob", "contrast_transfer_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.jitter_translate_px < 0 or self.jitter_intensity < 0:
            raise ValueError("jitter magnitudes must be >= 0")


IDENTITY_POLICY = AugmentPolicy(flip_prob=0.0, rot90_uniform=False,
                                jitter_translate_px=0, jitter_intensity=0,
                                contrast_transfer_prob=0.0)


def _translate_mirror(pixels: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Shift patch content by (dr, dc), filling the exposed band by mirroring."""
    if dr == 0 and dc == 0:
        return pixels
    p = pixels.shape[0]
    m = max(abs(dr), abs(dc))
    padded = np.pad(pixels, ((m, m), (m, m), (0, 0)), mode="symmetric")
    r0, c0 = m + dr, m + dc
    return np.ascontiguousarray(padded[r0:r0 + p, c0:c0 + p])


def spatial_augment(record: PatchRecord, policy: AugmentPolicy,
                    rng: np.random.Generator,
                    source_pixels: np.ndarray | None = None) -> PatchRecord:
    """Random flips, 90-degree rotation and jitter; label and set unchanged.

    Translation jitter re-crops from ``source_pixels`` when the source image is
    available, otherwise the exposed band is mirror-filled from the patch.
    """
    pix = record.pixels
    p = record.size
    if policy.jitter_translate_px > 0:
        dr, dc = rng.integers(-policy.jitter_translate_px,
                              policy.jitter_translate_px + 1, size=2)
        if source_pixels is not None:
            h, w = source_pixels.shape[:2]
            half = p // 2
            r0 = min(max(record.center.row + int(dr) - half, 0), h - p)
            c0 = min(max(record.center.col + int(dc) - half, 0), w - p)
            pix = np.ascontiguousarray(source_pixels[r0:r0 + p, c0:c0 + p])
        else:
            pix = _translate_mirror(pix, int(dr), int(dc))
    if policy.flip_prob > 0:
        if rng.random() < policy.flip_prob:
            pix = pix[:, ::-1]
        if rng.random() < policy.flip_prob:
            pix = pix[::-1, :]
    if policy.rot90_uniform:
        k = int(rng.integers(0, 4))
        if k:
            pix = np.rot90(pix, k)
    if policy.jitter_intensity > 0:
        delta = int(rng.integers(-policy.jitter_intensity, policy.jitter_intensity + 1))
        if delta:
            pix = np.clip(pix.astype(np.int16) + delta, 0, 255).astype(np.uint8)
    return dataclasses.replace(record, pixels=np.ascontiguousarray(pix))
