"""Crop dataset construction: masked chips, padding, splits and augmentation.

Each labeled segment yields one RGB chip clipped to its bounding box with
non-member pixels set to a fill value. Chips are filtered, split per class
into train/validation/test (test and validation each get floor(n/4), the
remainder trains), padded to a square side, and the train/validation chips
of the tree classes are multiplied by randomized affine copies. All
randomness is reproducible: every crop's augmentation stream derives from
(seed, source segment id, copy index), never from execution order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .labeling import LabelStore, LabelingError
from .segmentation import SegmentMap

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "unassigned")

# image-count multiplication is applied to every tree class but not "others"
UNAUGMENTED_CLASSES = frozenset({7})


class DatasetError(Exception):
    pass


@dataclass
class Crop:
    """One masked RGB chip with its label, split tag and lineage."""

    image: np.ndarray  # (h, w, 3) uint8
    class_id: int
    source_segment: int
    n_pixels: int      # member pixel count of the source segment
    split: str = "unassigned"
    lineage: str = "original"

    @property
    def is_original(self) -> bool:
        return self.lineage == "original"


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.50
    val: float = 0.25
    test: float = 0.25
    seed: int = 42

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise DatasetError("split fractions must sum to 1")


@dataclass(frozen=True)
class AugmentSpec:
    """Randomized affine copies: rotation, shift, shear, zoom and flips."""

    copies: int = 20
    rotation_deg: float = 180.0
    shift_frac: float = 0.10
    shear_deg: float = 10.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    flip_h: bool = True
    flip_v: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.copies < 0:
            raise DatasetError("copies must be nonnegative")
        lo, hi = self.zoom_range
        if not (0 < lo <= hi):
            raise DatasetError(f"bad zoom range {self.zoom_range}")


# ---------------------------------------------------------------------------
# Extraction

def extract_crop(rgb: np.ndarray, seg_map: SegmentMap, seg_id: int,
                 store: LabelStore, fill: int = 0) -> Crop:
    """Clip one segment's bounding box out of the orthomosaic.

    Pixels inside the bbox that belong to other segments (or background) are
    set to the fill value. The segment must already carry a label.
    """
    stats = seg_map.require(seg_id)
    record = store.get(seg_id)
    if record is None:
        raise LabelingError(f"segment {seg_id} is unlabeled; extract needs a class")
    x, y, w, h = stats.bbox
    chip = np.asarray(rgb[y:y + h, x:x + w], dtype=np.uint8).copy()
    member = seg_map.labels[y:y + h, x:x + w] == seg_id
    chip[~member] = fill
    return Crop(image=chip, class_id=record.class_id, source_segment=seg_id,
                n_pixels=stats.n)


def extract_crops(rgb: np.ndarray, seg_map: SegmentMap, store: LabelStore,
                  fill: int = 0) -> list[Crop]:
    return [extract_crop(rgb, seg_map, sid, store, fill) for sid in seg_map.ids()]


def filter_crops(crops: list[Crop], min_pixels: int = 25,
                 reject: set[int] | None = None) -> tuple[list[Crop], dict[int, tuple[int, int]]]:
    """Drop too-small chips and manually rejected segments.

    Returns the kept crops and a per-class (extracted, kept) count report.
    """
    reject = reject or set()
    kept = [c for c in crops
            if c.n_pixels >= min_pixels and c.source_segment not in reject]
    report: dict[int, tuple[int, int]] = {}
    for cls in sorted({c.class_id for c in crops}):
        before = sum(1 for c in crops if c.class_id == cls)
        after = sum(1 for c in kept if c.class_id == cls)
        report[cls] = (before, after)
    if not kept:
        log.warning("crop filter removed every crop (min_pixels=%d, %d rejects)",
                    min_pixels, len(reject))
    return kept, report


# ---------------------------------------------------------------------------
# Geometry

def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize of an (h, w, 3) uint8 image."""
    h, w = image.shape[:2]
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    img = image.astype(np.float64)
    out = ((1 - fr) * (1 - fc) * img[r0][:, c0]
           + (1 - fr) * fc * img[r0][:, c1]
           + fr * (1 - fc) * img[r1][:, c0]
           + fr * fc * img[r1][:, c1])
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def pad_to_square(image: np.ndarray, side: int = 256, fill: int = 0,
                  downscale_allowed: bool = True) -> np.ndarray:
    """Center the chip on a side x side canvas filled with the fill value.

    Oversized chips are first shrunk (bilinear, aspect preserved) when
    downscaling is allowed; original pixels are untouched otherwise.
    """
    h, w = image.shape[:2]
    if h > side or w > side:
        if not downscale_allowed:
            raise DatasetError(f"chip {w}x{h} exceeds target side {side}")
        scale = side / max(h, w)
        nh = max(1, int(round(h * scale)))
        nw = max(1, int(round(w * scale)))
        image = bilinear_resize(image, min(nh, side), min(nw, side))
        h, w = image.shape[:2]
    out = np.full((side, side, 3), fill, dtype=np.uint8)
    oy = (side - h) // 2
    ox = (side - w) // 2
    out[oy:oy + h, ox:ox + w] = image
    return out


# ---------------------------------------------------------------------------
# Split

def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for one class of n crops."""
    test = n // 4
    val = n // 4
    return n - val - test, val, test


def assign_splits(items: list[tuple[int, int]], seed: int = 42) -> dict[int, str]:
    """Split tags for (class_id, source_segment) pairs, by seeded shuffle.

    Per class of size n: test and val each get floor(n/4), the rest trains.
    Returns source_segment -> split.
    """
    by_class: dict[int, list[int]] = {}
    for cls, seg in items:
        by_class.setdefault(cls, []).append(seg)

    tags: dict[int, str] = {}
    for cls, segs in sorted(by_class.items()):
        segs = sorted(segs)
        n = len(segs)
        if n < 4:
            log.warning("class %d has only %d crops; all go to the train split", cls, n)
        n_train, n_val, n_test = split_counts(n)
        order = np.random.default_rng([seed, cls]).permutation(n)
        for pos, idx in enumerate(order):
            if pos < n_test:
                tags[segs[idx]] = "test"
            elif pos < n_test + n_val:
                tags[segs[idx]] = "val"
            else:
                tags[segs[idx]] = "train"
    return tags


def split(crops: list[Crop], spec: SplitSpec | None = None) -> list[Crop]:
    """Tag every original crop with a split, per class, by seeded shuffle."""
    spec = spec or SplitSpec()
    tags = assign_splits([(c.class_id, c.source_segment) for c in crops], spec.seed)
    return [replace(c, split=tags[c.source_segment]) for c in crops]


# ---------------------------------------------------------------------------
# Augmentation

def _affine_sample(image: np.ndarray, matrix: np.ndarray, shift: np.ndarray,
                   fill: int) -> np.ndarray:
    """Inverse-map bilinear sampling of an affine transform about the center."""
    h, w = image.shape[:2]
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    inv = np.linalg.inv(matrix)
    out_r, out_c = np.meshgrid(np.arange(h, dtype=np.float64),
                               np.arange(w, dtype=np.float64), indexing="ij")
    dx = out_c - cx - shift[0]
    dy = out_r - cy - shift[1]
    src_x = inv[0, 0] * dx + inv[0, 1] * dy + cx
    src_y = inv[1, 0] * dx + inv[1, 1] * dy + cy

    inside = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    x = np.clip(src_x, 0, w - 1)
    y = np.clip(src_y, 0, h - 1)
    c0 = np.floor(x).astype(int)
    r0 = np.floor(y).astype(int)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fc = (x - c0)[..., None]
    fr = (y - r0)[..., None]
    img = image.astype(np.float64)
    val = ((1 - fr) * (1 - fc) * img[r0, c0]
           + (1 - fr) * fc * img[r0, c1]
           + fr * (1 - fc) * img[r1, c0]
           + fr * fc * img[r1, c1])
    val = np.clip(np.rint(val), 0, 255).astype(np.uint8)
    val[~inside] = fill
    return val


def _transform_matrix(rotation_deg: float, shear_deg: float, zoom: float) -> np.ndarray:
    theta = np.deg2rad(rotation_deg)
    phi = np.deg2rad(shear_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, np.tan(phi)], [0.0, 1.0]])
    return rot @ shear * zoom


def augment_crop(crop: Crop, spec: AugmentSpec, fill: int = 0) -> list[Crop]:
    """The original crop plus ``spec.copies`` randomized affine copies.

    Not applicable to test-split crops or the "others" class; those are
    never multiplied.
    """
    if crop.split == "test":
        raise DatasetError("test crops are never augmented")
    if crop.class_id in UNAUGMENTED_CLASSES:
        raise DatasetError(f"class {crop.class_id} is never augmented")
    out = [crop]
    for k in range(1, spec.copies + 1):
        rng = np.random.default_rng([spec.seed, crop.source_segment, k])
        rotation = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
        shift_x = rng.uniform(-spec.shift_frac, spec.shift_frac) * crop.image.shape[1]
        shift_y = rng.uniform(-spec.shift_frac, spec.shift_frac) * crop.image.shape[0]
        shear = rng.uniform(-spec.shear_deg, spec.shear_deg)
        zoom = rng.uniform(*spec.zoom_range)
        do_flip_h = spec.flip_h and rng.random() < 0.5
        do_flip_v = spec.flip_v and rng.random() < 0.5

        matrix = _transform_matrix(rotation, shear, zoom)
        image = _affine_sample(crop.image, matrix, np.array([shift_x, shift_y]), fill)
        if do_flip_h:
            image = image[:, ::-1]
        if do_flip_v:
            image = image[::-1, :]
        out.append(replace(crop, image=np.ascontiguousarray(image),
                           lineage=f"augmented({k})"))
    return out


def augment_crops(crops: list[Crop], spec: AugmentSpec, fill: int = 0) -> list[Crop]:
    """Multiply train/val crops of the tree classes; pass everything else through."""
    out: list[Crop] = []
    for crop in crops:
        if (crop.split in ("train", "val")
                and crop.class_id not in UNAUGMENTED_CLASSES and crop.is_original):
            out.extend(augment_crop(crop, spec, fill))
        else:
            out.append(crop)
    return out


# ---------------------------------------------------------------------------
# Manifest

MANIFEST_FIELDS = ("path", "class", "split", "lineage", "source_segment")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    class_id: int
    split: str
    lineage: str
    source_segment: int


def _crop_filename(crop: Crop) -> str:
    if crop.is_original:
        suffix = "orig"
    else:
        k = int(crop.lineage[len("augmented("):-1])
        suffix = f"aug{k:03d}"
    return f"{crop.class_id}/seg{crop.source_segment:06d}_{suffix}.png"


def write_manifest(crops: list[Crop], out_dir, require_split: bool = True) -> Path:
    """Write chips as PNG under per-class directories plus a CSV manifest.

    With ``require_split`` (the default) every crop must be split-tagged;
    the staged extract step opts out and tags later.
    """
    out_dir = Path(out_dir)
    if require_split:
        for crop in crops:
            if crop.split == "unassigned":
                raise DatasetError(
                    f"crop of segment {crop.source_segment} has no split tag; run split first")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for crop in sorted(crops, key=lambda c: (c.class_id, c.source_segment, c.lineage)):
            rel = _crop_filename(crop)
            target = out_dir / rel
            target.parent.mkdir(exist_ok=True)
            Image.fromarray(crop.image, mode="RGB").save(target)
            writer.writerow([rel, crop.class_id, crop.split, crop.lineage,
                             crop.source_segment])
    return manifest


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ManifestRow(path=rec["path"], class_id=int(rec["class"]),
                                    split=rec["split"], lineage=rec["lineage"],
                                    source_segment=int(rec["source_segment"])))
    return rows


def load_manifest_images(manifest_path, rows: list[ManifestRow]) -> np.ndarray:
    """Stack the manifest rows' images as one (N, h, w, 3) uint8 array."""
    base = Path(manifest_path).parent
    return np.stack([np.asarray(Image.open(base / row.path).convert("RGB"), dtype=np.uint8)
                     for row in rows])


def _write_rows(manifest_path, rows: list[ManifestRow]) -> None:
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for row in sorted(rows, key=lambda r: (r.class_id, r.source_segment, r.lineage)):
            writer.writerow([row.path, row.class_id, row.split, row.lineage,
                             row.source_segment])


def retag_manifest(manifest_path, seed: int = 42) -> dict[str, int]:
    """(Re)assign split tags in a crops manifest; images stay put.

    Augmented rows inherit their original's split. Returns per-split counts.
    """
    rows = read_manifest(manifest_path)
    originals = [r for r in rows if r.lineage == "original"]
    tags = assign_splits([(r.class_id, r.source_segment) for r in originals], seed)
    retagged = [ManifestRow(r.path, r.class_id, tags[r.source_segment], r.lineage,
                            r.source_segment) for r in rows]
    _write_rows(manifest_path, retagged)
    counts: dict[str, int] = {}
    for r in retagged:
        counts[r.split] = counts.get(r.split, 0) + 1
    return counts


def augment_manifest(manifest_path, spec: AugmentSpec, fill: int = 0) -> dict[int, int]:
    """Augment the train/val originals of a stored crops directory in place.

    Existing augmented rows are replaced. Returns per-class image counts.
    """
    base = Path(manifest_path).parent
    rows = read_manifest(manifest_path)
    for old in [r for r in rows if r.lineage != "original"]:
        (base / old.path).unlink(missing_ok=True)
    rows = [r for r in rows if r.lineage == "original"]

    out_rows = list(rows)
    for row in rows:
        if row.split not in ("train", "val") or row.class_id in UNAUGMENTED_CLASSES:
            continue
        image = np.asarray(Image.open(base / row.path).convert("RGB"), dtype=np.uint8)
        crop = Crop(image=image, class_id=row.class_id,
                    source_segment=row.source_segment, n_pixels=image.shape[0] * image.shape[1],
                    split=row.split)
        for copy in augment_crop(crop, spec, fill)[1:]:
            rel = _crop_filename(copy)
            (base / rel).parent.mkdir(exist_ok=True)
            Image.fromarray(copy.image, mode="RGB").save(base / rel)
            out_rows.append(ManifestRow(rel, copy.class_id, copy.split,
                                        copy.lineage, copy.source_segment))
    _write_rows(manifest_path, out_rows)
    counts: dict[int, int] = {}
    for r in out_rows:
        counts[r.class_id] = counts.get(r.class_id, 0) + 1
    return counts
