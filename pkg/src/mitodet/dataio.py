"""File IO: manifests, annotation/detection CSVs, patch banks, region readers."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .core import Annotation, Detection, HpfImage, PatchRecord, Point, SET_TO_LABEL
from .errors import DataError


# ---------------------------------------------------------------------------
# Images and region readers
# ---------------------------------------------------------------------------

def load_rgb(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_rgb(pixels: np.ndarray, path: Path | str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path)


class ArrayRegionSource:
    """Region reader over an in-memory RGB array.

    Reads are pure slices, so concurrent non-overlapping reads are safe.
    """

    def __init__(self, pixels: np.ndarray, wsi_id: str):
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
            raise DataError(f"slide {wsi_id!r}: expected HxWx3 uint8 pixels")
        self.pixels = pixels
        self.wsi_id = wsi_id

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def read_region(self, row: int, col: int, h: int, w: int) -> np.ndarray:
        if h <= 0 or w <= 0:
            raise DataError(f"slide {self.wsi_id!r}: non-positive region size {h}x{w}")
        if row < 0 or col < 0 or row + h > self.height or col + w > self.width:
            raise DataError(
                f"slide {self.wsi_id!r}: region ({row},{col},{h},{w}) outside "
                f"{self.height}x{self.width}")
        return np.ascontiguousarray(self.pixels[row:row + h, col:col + w])


def open_wsi(path: Path | str, wsi_id: str) -> ArrayRegionSource:
    """Open a desk-scale slide stored as a plain RGB image file."""
    return ArrayRegionSource(load_rgb(path), wsi_id)


def read_region_mirrored(source, row: int, col: int, h: int, w: int) -> np.ndarray:
    """Read a region in virtually mirror-padded slide coordinates.

    Out-of-bounds rows/cols are resolved by symmetric reflection at the slide
    border, matching the mirror padding applied before whole-image inference.
    Accepts any region reader or a bare HxWx3 array.
    """
    if isinstance(source, np.ndarray):
        source = ArrayRegionSource(source, "<array>")
    H, W = source.height, source.width
    r0, c0 = max(row, 0), max(col, 0)
    r1, c1 = min(row + h, H), min(col + w, W)
    if r0 >= r1 or c0 >= c1:
        raise DataError(f"region ({row},{col},{h},{w}) does not intersect the slide")
    block = source.read_region(r0, c0, r1 - r0, c1 - c0)
    pad = ((r0 - row, row + h - r1), (c0 - col, col + w - c1), (0, 0))
    if any(p for pair in pad for p in pair):
        # Reflection beyond the block only reproduces whole-image mirror
        # padding if the block reaches the image border it reflects at, and
        # multi-bounce reflection only if the block spans the full axis.
        for axis, (full, extent) in enumerate(((H, r1 - r0), (W, c1 - c0))):
            if max(pad[axis]) > extent and extent != full:
                raise DataError("mirror padding wider than the readable region")
        block = np.pad(block, pad, mode="symmetric")
    return block


# ---------------------------------------------------------------------------
# Annotation and detection CSVs
# ---------------------------------------------------------------------------

def parse_annotation_csv(path: Path | str, image: HpfImage) -> list[Annotation]:
    """Parse a ``row,col`` CSV of ground-truth locations for one image."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    h, w = image.shape
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'row,col', got {line!r}")
        try:
            row, col = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer coordinate in {line!r}")
        if not (0 <= row < h and 0 <= col < w):
            raise DataError(f"{path}:{lineno}: point ({row},{col}) outside {h}x{w} image")
        out.append(Annotation(Point(row, col), image.case_id, image.image_id))
    return out


def write_annotation_csv(points: list[Point], path: Path | str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{p.row},{p.col}\n" for p in points))


def serialize_detections(detections: list[Detection], path: Path | str) -> None:
    """Write detections as ``row,col,score`` with scores at 6 decimals."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{d.point.row},{d.point.col},{d.score:.6f}\n" for d in detections]
    Path(path).write_text("".join(lines))


def parse_detections(path: Path | str) -> list[Detection]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"detection file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'row,col,score', got {line!r}")
        try:
            out.append(Detection(Point(int(parts[0]), int(parts[1])), float(parts[2])))
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed detection {line!r}")
    return out


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledEntry:
    image_path: Path
    annotation_path: Path
    case_id: str
    image_id: str


@dataclass(frozen=True)
class UnlabeledEntry:
    wsi_path: Path
    wsi_id: str


@dataclass
class DatasetManifest:
    """Resolved dataset description: labeled HPFs and unlabeled slides."""

    labeled: list[LabeledEntry]
    unlabeled: list[UnlabeledEntry]
    split: str

    def load_image(self, entry: LabeledEntry) -> HpfImage:
        return HpfImage(load_rgb(entry.image_path), entry.image_id, entry.case_id)

    def load_annotations(self, entry: LabeledEntry, image: HpfImage) -> list[Annotation]:
        return parse_annotation_csv(entry.annotation_path, image)

    def open_wsi(self, entry: UnlabeledEntry) -> ArrayRegionSource:
        return open_wsi(entry.wsi_path, entry.wsi_id)

    @property
    def case_ids(self) -> list[str]:
        seen = sorted({e.case_id for e in self.labeled})
        return seen


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Entries come back sorted by (case_id, image_id) / wsi_id so downstream
    behavior does not depend on file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: malformed manifest: {exc}") from exc
    if not doc:
        raise DataError(f"{path}: no entries")
    if not isinstance(doc, dict):
        raise DataError(f"{path}: manifest must be a mapping")
    root = path.parent
    split = str(doc.get("split", "train"))
    if split not in ("train", "val"):
        raise DataError(f"{path}: split must be 'train' or 'val', got {split!r}")

    labeled = []
    seen_ids = set()
    for item in doc.get("hpfs") or []:
        try:
            case_id = str(item["case"])
            image_path = root / str(item["hpf"])
            ann_path = root / str(item["annotations"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: bad hpf entry {item!r}: {exc}") from exc
        image_id = str(item.get("image_id", Path(item["hpf"]).stem))
        if not case_id:
            raise DataError(f"{path}: empty case id for image {image_id!r}")
        if image_id in seen_ids:
            raise DataError(f"{path}: duplicate image_id {image_id!r}")
        seen_ids.add(image_id)
        if not image_path.exists():
            raise DataError(f"{path}: missing image file {image_path}")
        if not ann_path.exists():
            raise DataError(f"{path}: missing annotation file {ann_path}")
        labeled.append(LabeledEntry(image_path, ann_path, case_id, image_id))

    unlabeled = []
    seen_wsi = set()
    for item in doc.get("wsis") or []:
        try:
            wsi_path = root / str(item["wsi"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: bad wsi entry {item!r}: {exc}") from exc
        wsi_id = str(item.get("wsi_id", Path(item["wsi"]).stem))
        if wsi_id in seen_wsi:
            raise DataError(f"{path}: duplicate wsi_id {wsi_id!r}")
        seen_wsi.add(wsi_id)
        if not wsi_path.exists():
            raise DataError(f"{path}: missing wsi file {wsi_path}")
        unlabeled.append(UnlabeledEntry(wsi_path, wsi_id))

    if not labeled and not unlabeled:
        raise DataError(f"{path}: no entries")
    labeled.sort(key=lambda e: (e.case_id, e.image_id))
    unlabeled.sort(key=lambda e: e.wsi_id)
    return DatasetManifest(labeled, unlabeled, split)


def write_manifest(path: Path | str, split: str,
                   hpfs: list[dict], wsis: list[dict] | None = None) -> None:
    """Write a manifest YAML; entry dicts use the documented field names."""
    doc = {"split": split, "hpfs": hpfs}
    if wsis:
        doc["wsis"] = wsis
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


# ---------------------------------------------------------------------------
# Patch banks
# ---------------------------------------------------------------------------

INDEX_NAME = "index.csv"


def patch_bank_save(records: list[PatchRecord], bank_dir: Path | str) -> None:
    """Persist patches as PNG files plus a line-delimited index."""
    bank_dir = Path(bank_dir)
    bank_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rec in enumerate(records):
        name = f"p{i:06d}.png"
        save_rgb(rec.pixels, bank_dir / name)
        rows.append([name, rec.label, rec.set, rec.source_id,
                     str(rec.center.row), str(rec.center.col)])
    with open(bank_dir / INDEX_NAME, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def patch_bank_load(bank_dir: Path | str) -> list[PatchRecord]:
    bank_dir = Path(bank_dir)
    index = bank_dir / INDEX_NAME
    if not index.exists():
        raise DataError(f"patch bank index not found: {index}")
    records = []
    size = None
    with open(index, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != 6:
                raise DataError(f"{index}:{lineno}: expected 6 fields, got {len(row)}")
            name, label, set_tag, source_id, r, c = row
            patch_path = bank_dir / name
            if not patch_path.exists():
                raise DataError(f"{index}:{lineno}: missing patch file {patch_path}")
            pixels = load_rgb(patch_path)
            if set_tag not in SET_TO_LABEL:
                raise DataError(f"{index}:{lineno}: unknown set tag {set_tag!r}")
            try:
                center = Point(int(r), int(c))
            except ValueError:
                raise DataError(f"{index}:{lineno}: bad center ({r},{c})")
            rec = PatchRecord(pixels, label, set_tag, source_id, center)
            if size is None:
                size = rec.size
            elif rec.size != size:
                raise DataError(f"{index}:{lineno}: patch size {rec.size} != bank size {size}")
            records.append(rec)
    return records
