"""CIELAB conversion and mean/std contrast transfer between images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# sRGB <-> XYZ under D65.
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_LAB_DELTA = 6.0 / 29.0
STD_GUARD = 1e-6  # zero-variance guard on source std


def _srgb_decode(u: np.ndarray) -> np.ndarray:
    return np.where(u <= 0.04045, u / 12.92, ((u + 0.055) / 1.055) ** 2.4)


def _srgb_encode(u: np.ndarray) -> np.ndarray:
    u = np.maximum(u, 0.0)
    return np.where(u <= 0.0031308, 12.92 * u, 1.055 * u ** (1.0 / 2.4) - 0.055)


_DECODE_LUT = _srgb_decode(np.arange(256, dtype=np.float64) / 255.0)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA ** 3, np.cbrt(t), t / (3 * _LAB_DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_DELTA, t ** 3, 3 * _LAB_DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(pixels: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB to CIELAB (D65); L in [0, 100]."""
    if pixels.dtype == np.uint8:
        linear = _DECODE_LUT[pixels]
    else:
        linear = _srgb_decode(np.asarray(pixels, dtype=np.float64) / 255.0)
    xyz = linear @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _D65_WHITE)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Convert CIELAB back to 8-bit sRGB, clamping out-of-gamut values."""
    lab = np.asarray(lab, dtype=np.float64)
    if not np.isfinite(lab).all():
        raise DataError("non-finite LAB values")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _D65_WHITE
    linear = xyz @ _XYZ_TO_RGB.T
    rgb = _srgb_encode(np.clip(linear, 0.0, None)) * 255.0
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class LabStats:
    """Per-channel mean and population std of an image in LAB space."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if any(s < 0 for s in self.std):
            raise DataError(f"negative LAB std {self.std}")


def lab_stats(pixels: np.ndarray) -> LabStats:
    """Per-channel LAB mean and population standard deviation of an RGB image."""
    if pixels.size == 0:
        raise DataError("empty image")
    flat = rgb_to_lab(pixels).reshape(-1, 3)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return LabStats(tuple(mean.tolist()), tuple(std.tolist()))


def transfer_lab(lab: np.ndarray, target: LabStats) -> np.ndarray:
    """Shift per-channel LAB mean/std of ``lab`` to the target statistics."""
    flat = lab.reshape(-1, 3)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    scale = np.asarray(target.std) / np.maximum(std, STD_GUARD)
    return (lab - mean) * scale + np.asarray(target.mean)


def contrast_transfer(pixels: np.ndarray, target: LabStats) -> np.ndarray:
    """Match the LAB mean/std of an RGB image to ``target``; clamp to gamut."""
    if not all(np.isfinite(v) for v in (*target.mean, *target.std)):
        raise DataError("non-finite target stats")
    return lab_to_rgb(transfer_lab(rgb_to_lab(pixels), target))
