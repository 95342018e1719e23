"""Tree-class assignment per segment and nearest-neighbor propagation.

Human analysts label a handful of segments; the rest are filled in with
1-nearest-neighbor classification over per-segment features (layer means and
standard deviations, standardized over all segments). Human labels and
corrections are never touched by prediction runs: correcting a wrong
prediction turns that segment into a training sample for the next run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grids import Band, write_ascii_grid, load_ascii_grid
from .segmentation import SegmentMap
from .grids import LayerStack


class LabelingError(Exception):
    pass


@dataclass(frozen=True)
class TreeClass:
    id: int
    name: str
    color: str


TREE_CLASSES = (
    TreeClass(1, "deciduous broad-leaved tree", "#e6b422"),
    TreeClass(2, "deciduous coniferous tree", "#d9333f"),
    TreeClass(3, "evergreen broad-leaved tree", "#007b43"),
    TreeClass(4, "Chamaecyparis obtusa", "#2ca9e1"),
    TreeClass(5, "Pinus", "#674598"),
    TreeClass(6, "Pinus strobus", "#f19072"),
    TreeClass(7, "others", "#9fa0a0"),
)

CLASS_IDS = tuple(c.id for c in TREE_CLASSES)

PROVENANCES = ("sample", "predicted", "corrected")
HUMAN_PROVENANCES = ("sample", "corrected")


@dataclass
class LabelRecord:
    class_id: int
    provenance: str
    ts: float

    @property
    def is_human(self) -> bool:
        return self.provenance in HUMAN_PROVENANCES


class LabelStore:
    """segment id -> (tree class, provenance, timestamp)."""

    def __init__(self):
        self._records: dict[int, LabelRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, seg_id: int) -> bool:
        return seg_id in self._records

    def get(self, seg_id: int) -> LabelRecord | None:
        return self._records.get(seg_id)

    def records(self) -> dict[int, LabelRecord]:
        return dict(self._records)

    def sample_ids(self) -> list[int]:
        return sorted(s for s, r in self._records.items() if r.is_human)

    def set_sample(self, seg_id: int, class_id: int) -> None:
        _check_class(class_id)
        self._records[seg_id] = LabelRecord(class_id, "sample", time.time())

    def set_predicted(self, seg_id: int, class_id: int) -> None:
        _check_class(class_id)
        existing = self._records.get(seg_id)
        if existing is not None and existing.is_human:
            raise LabelingError(
                f"segment {seg_id} carries a human label; predictions may not overwrite it")
        self._records[seg_id] = LabelRecord(class_id, "predicted", time.time())

    def correct(self, seg_id: int, class_id: int) -> None:
        _check_class(class_id)
        self._records[seg_id] = LabelRecord(class_id, "corrected", time.time())

    def drop(self, seg_id: int) -> None:
        self._records.pop(seg_id, None)

    # persistence -----------------------------------------------------------
    def append_to(self, path, seg_id: int) -> None:
        record = self._records[seg_id]
        with open(path, "a") as fh:
            fh.write(json.dumps({"segment": seg_id, "class": record.class_id,
                                 "provenance": record.provenance, "ts": record.ts}) + "\n")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for seg_id in sorted(self._records):
                r = self._records[seg_id]
                fh.write(json.dumps({"segment": seg_id, "class": r.class_id,
                                     "provenance": r.provenance, "ts": r.ts}) + "\n")

    @classmethod
    def load(cls, path) -> "LabelStore":
        store = cls()
        path = Path(path)
        if not path.exists():
            return store
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                store._records[int(rec["segment"])] = LabelRecord(
                    int(rec["class"]), rec["provenance"], float(rec.get("ts", 0.0)))
        return store


def _check_class(class_id: int) -> None:
    if class_id not in CLASS_IDS:
        raise LabelingError(f"unknown tree class {class_id}; valid ids are {CLASS_IDS}")


def apply_correction(store: LabelStore, seg_map: SegmentMap, seg_id: int,
                     class_id: int) -> LabelStore:
    """Set a human-corrected label; the segment becomes a training sample."""
    seg_map.require(seg_id)
    store.correct(seg_id, class_id)
    return store


# ---------------------------------------------------------------------------
# Features

@dataclass
class FeatureTable:
    """Standardized per-segment features plus the standardization stats."""

    ids: np.ndarray        # (K,) int64, sorted
    features: np.ndarray   # (K, 2 * nlayers) float64
    raw_mean: np.ndarray   # (2 * nlayers,) feature-wise mean before standardizing
    raw_std: np.ndarray    # (2 * nlayers,) feature-wise population std

    def row(self, seg_id: int) -> np.ndarray:
        idx = np.searchsorted(self.ids, seg_id)
        if idx >= len(self.ids) or self.ids[idx] != seg_id:
            raise LabelingError(f"segment {seg_id} has no feature row")
        return self.features[idx]


def segment_features(stack: LayerStack, seg_map: SegmentMap) -> FeatureTable:
    """Per-segment (mean, std) of every layer, standardized across segments.

    Feature dimensions with zero variance across segments are set to 0.
    """
    ids = np.array(seg_map.ids(), dtype=np.int64)
    if len(ids) == 0:
        raise LabelingError("segment map is empty")
    nlayers = stack.layers.shape[0]
    raw = np.empty((len(ids), 2 * nlayers))
    for i, sid in enumerate(ids):
        s = seg_map.stats[int(sid)]
        raw[i, :nlayers] = s.mean
        raw[i, nlayers:] = s.std
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    features = np.zeros_like(raw)
    nz = std > 0
    features[:, nz] = (raw[:, nz] - mean[nz]) / std[nz]
    return FeatureTable(ids=ids, features=features, raw_mean=mean, raw_std=std)


# ---------------------------------------------------------------------------
# Nearest-neighbor propagation

def nn_classify(table: FeatureTable, store: LabelStore) -> dict[int, int]:
    """Assign every unlabeled-or-predicted segment the class of its nearest sample.

    Distances are Euclidean in feature space; exact ties go to the sample
    with the lower segment id. Human records are left untouched. Returns the
    predictions that were applied (segment id -> class id).
    """
    sample_ids = store.sample_ids()
    if not sample_ids:
        raise LabelingError("no labeled samples to classify from")
    sample_ids = np.array(sample_ids, dtype=np.int64)
    sample_rows = np.array([table.row(int(s)) for s in sample_ids])
    sample_classes = np.array([store.get(int(s)).class_id for s in sample_ids])

    predictions: dict[int, int] = {}
    human = {int(s) for s in sample_ids}
    for i, sid in enumerate(table.ids):
        sid = int(sid)
        if sid in human:
            continue
        d2 = np.sum((sample_rows - table.features[i]) ** 2, axis=1)
        best = np.min(d2)
        winner = int(np.min(sample_ids[d2 == best]))  # tie -> lower sample id
        cls = int(sample_classes[sample_ids == winner][0])
        store.set_predicted(sid, cls)
        predictions[sid] = cls
    return predictions


# ---------------------------------------------------------------------------
# Ground truth export

class UnlabeledSegmentsError(LabelingError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        preview = ", ".join(str(i) for i in self.ids[:20])
        more = "" if len(self.ids) <= 20 else f" (+{len(self.ids) - 20} more)"
        super().__init__(f"segments without a label: {preview}{more}")


def ground_truth_raster(seg_map: SegmentMap, store: LabelStore) -> np.ndarray:
    """Per-pixel class-id raster (0 = background); every segment must be labeled."""
    missing = [sid for sid in seg_map.ids() if store.get(sid) is None]
    if missing:
        raise UnlabeledSegmentsError(missing)
    lut = np.zeros(int(seg_map.labels.max()) + 1, dtype=np.int32)
    for sid in seg_map.ids():
        lut[sid] = store.get(sid).class_id
    return lut[seg_map.labels]


def legend_json() -> list[dict]:
    return [{"id": c.id, "name": c.name, "color": c.color} for c in TREE_CLASSES]


def export_ground_truth(seg_map: SegmentMap, store: LabelStore,
                        raster_path, legend_path) -> None:
    classes = ground_truth_raster(seg_map, store)
    band = Band(seg_map.grid, classes.astype(np.float64))
    write_ascii_grid(raster_path, band, nodata=-1, fmt="%d")
    Path(legend_path).write_text(json.dumps(legend_json(), indent=2))


def load_ground_truth(path) -> np.ndarray:
    return load_ascii_grid(path).values.astype(np.int32)
