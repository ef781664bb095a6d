"""Domain types: points, annotations, detections, images, patches."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

LABEL_BACKGROUND = "background"
LABEL_MITOSIS = "mitosis"

SET_BG_RAND = "BG-Rand"
SET_BG_HARD = "BG-Hard"
SET_FG_LAB = "FG-Lab"
SET_FG_WSI = "FG-WSI"

SET_TO_LABEL = {
    SET_BG_RAND: LABEL_BACKGROUND,
    SET_BG_HARD: LABEL_BACKGROUND,
    SET_FG_LAB: LABEL_MITOSIS,
    SET_FG_WSI: LABEL_MITOSIS,
}


@dataclass(frozen=True, order=True)
class Point:
    """Pixel location as (row, col), origin at the top-left corner."""

    row: int
    col: int

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.row - other.row, self.col - other.col)


@dataclass(frozen=True)
class Annotation:
    """A ground-truth mitosis location in a labeled field."""

    point: Point
    case_id: str
    image_id: str


@dataclass(frozen=True)
class Detection:
    """A detected location with a foreground probability score."""

    point: Point
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise DataError(f"detection score {self.score} outside [0, 1]")


@dataclass
class HpfImage:
    """An exhaustively annotated high-power field as an 8-bit RGB array."""

    pixels: np.ndarray
    image_id: str
    case_id: str

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise DataError(f"image {self.image_id!r}: expected HxWx3 uint8, got "
                            f"shape {p.shape} dtype {p.dtype}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class PatchRecord:
    """A square training patch with its label and provenance.

    The set tag fixes the label: FG-* patches are mitosis, BG-* patches are
    background. ``center`` is the patch center in the source image.
    """

    pixels: np.ndarray = field(compare=False)
    label: str
    set: str
    source_id: str
    center: Point

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3 or p.dtype != np.uint8:
            raise DataError(f"patch from {self.source_id!r}: expected PxPx3 uint8, "
                            f"got shape {p.shape} dtype {p.dtype}")
        if self.set not in SET_TO_LABEL:
            raise DataError(f"unknown patch set tag {self.set!r}")
        if SET_TO_LABEL[self.set] != self.label:
            raise DataError(f"patch set {self.set} is inconsistent with label {self.label}")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def crop_centered(pixels: np.ndarray, center: Point, size: int) -> tuple[np.ndarray, Point]:
    """Crop a size x size window centered at ``center``, clamped inside the image.

    Returns the crop and the (possibly shifted) actual center.
    """
    h, w = pixels.shape[:2]
    if h < size or w < size:
        raise DataError(f"image {h}x{w} smaller than patch size {size}")
    half = size // 2
    r0 = min(max(center.row - half, 0), h - size)
    c0 = min(max(center.col - half, 0), w - size)
    crop = np.ascontiguousarray(pixels[r0:r0 + size, c0:c0 + size])
    return crop, Point(r0 + half, c0 + half)
