"""Project directories and the batch pipeline.

A project directory holds everything one scene needs: the layer stack, the
segment map, the label journal and the stage outputs. ``run_pipeline``
drives the full chain from a declarative JSON config: slope derivation,
stacking, segmentation, (auto-)labeling, crop extraction, split,
augmentation, training and evaluation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from . import evaluation as ev
from . import labeling as lb
from .classifier import (ModelConfig, TrainConfig, load_model, save_model,
                         train_manifest, write_history_csv)
from .classifier.train import prepare_images
from .grids import (Band, LayerStack, load_ascii_grid, load_rgb, load_stack,
                    resample, build_stack, save_stack, write_ascii_grid)
from .segmentation import (MergeParams, SegmentMap, build_segment_map,
                           export_segment_records, import_segment_map, segment,
                           write_label_raster)
from .terrain import slope as derive_slope

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
PROJECT_VERSION = 1


class ProjectError(Exception):
    pass


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def load_config(path) -> dict:
    """Read a pipeline config; relative paths are anchored at the file."""
    path = Path(path)
    cfg = json.loads(path.read_text())
    version = cfg.get("version")
    if version != CONFIG_VERSION:
        raise ProjectError(f"unsupported config version {version!r}")
    base = path.parent
    for key in ("ortho", "dem", "slope", "workdir"):
        if key in cfg:
            cfg[key] = _resolve(base, cfg[key])
    if cfg.get("labeling", {}).get("truth_raster"):
        cfg["labeling"]["truth_raster"] = _resolve(base, cfg["labeling"]["truth_raster"])
    return cfg


def merge_params_from(cfg: dict) -> MergeParams:
    seg = cfg.get("segmentation", {})
    return MergeParams(scale=seg.get("scale", 200.0),
                       shape_weight=seg.get("shape", 0.2),
                       compactness_weight=seg.get("compactness", 0.5))


@dataclass
class Project:
    """Filesystem handle on one scene's artifacts."""

    root: Path

    @property
    def meta_path(self) -> Path:
        return self.root / "project.json"

    @property
    def labels_path(self) -> Path:
        return self.root / "labels.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.root / "crops" / "manifest.csv"

    def meta(self) -> dict:
        if not self.meta_path.exists():
            raise ProjectError(f"not a project directory (missing {self.meta_path})")
        return json.loads(self.meta_path.read_text())

    def stack(self) -> LayerStack:
        return load_stack(self.root / "stack.npz")

    def segment_map(self) -> SegmentMap:
        return import_segment_map(self.stack(), self.root / "segments.asc")

    def label_store(self) -> lb.LabelStore:
        return lb.LabelStore.load(self.labels_path)

    def ortho_rgb(self) -> np.ndarray:
        ortho = self.meta()["ortho"]
        return np.asarray(Image.open(ortho).convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Stages

def prepare_layers(cfg: dict) -> tuple[LayerStack, np.ndarray]:
    """Load inputs, derive slope if absent, resample onto the ortho grid."""
    r, g, b = load_rgb(cfg["ortho"])
    dem = load_ascii_grid(cfg["dem"])
    if cfg.get("slope"):
        slope_band = load_ascii_grid(cfg["slope"])
    else:
        slope_band = derive_slope(dem)
    target = r.grid
    dem_r = resample(dem, target, "bilinear") if dem.grid != target else dem
    slope_r = resample(slope_band, target, "bilinear") if slope_band.grid != target else slope_band
    stack = build_stack(r, g, b, dem_r, slope_r, cfg.get("weights"))
    rgb = np.stack([r.values, g.values, b.values], axis=-1).astype(np.uint8)
    return stack, rgb


def build_project(cfg: dict) -> Project:
    """Segment the scene and persist stack + segment map + metadata."""
    workdir = Path(cfg["workdir"])
    workdir.mkdir(parents=True, exist_ok=True)
    stack, _ = prepare_layers(cfg)
    save_stack(workdir / "stack.npz", stack)

    seg_map = segment(stack, merge_params_from(cfg))
    write_label_raster(seg_map, workdir / "segments.asc")
    export_segment_records(seg_map, workdir / "segments.csv", stack.names)

    meta = {
        "version": PROJECT_VERSION,
        "ortho": cfg["ortho"],
        "dem": cfg["dem"],
        "stack": "stack.npz",
        "segments": "segments.asc",
        "records": "segments.csv",
        "labels": "labels.jsonl",
        "config": cfg,
    }
    (workdir / "project.json").write_text(json.dumps(meta, indent=2))
    log.info("segmented %d segments over %dx%d", seg_map.segment_count,
             stack.grid.width, stack.grid.height)
    return Project(root=workdir)


def autolabel_from_truth(project: Project, truth_path) -> int:
    """Label every segment with the majority truth class of its pixels."""
    seg_map = project.segment_map()
    truth = lb.load_ground_truth(truth_path)
    if truth.shape != seg_map.labels.shape:
        raise ProjectError("truth raster does not match the segment raster")
    labels = seg_map.labels.astype(np.int64).ravel()
    classes = truth.astype(np.int64).ravel()
    n_classes = len(lb.CLASS_IDS)
    valid = (labels > 0) & (classes >= 1) & (classes <= n_classes)
    keys = labels[valid] * (n_classes + 1) + classes[valid]
    counts = np.bincount(keys, minlength=(int(labels.max()) + 1) * (n_classes + 1))
    table = counts.reshape(-1, n_classes + 1)

    store = lb.LabelStore()
    for sid in seg_map.ids():
        votes = table[sid, 1:]
        if votes.sum() == 0:
            store.set_sample(sid, 7)  # no truth coverage -> "others"
        else:
            store.set_sample(sid, int(votes.argmax()) + 1)  # ties -> lower class id
    store.save(project.labels_path)
    return len(store)


def export_ground_truth_stage(project: Project) -> dict[str, str]:
    seg_map = project.segment_map()
    store = project.label_store()
    raster = project.root / "ground_truth.asc"
    legend = project.root / "legend.json"
    lb.export_ground_truth(seg_map, store, raster, legend)
    return {"ground_truth": str(raster), "legend": str(legend)}


def build_dataset_stage(project: Project, cfg: dict) -> dict:
    """extract -> filter -> split -> augment -> pad -> manifest."""
    dcfg = cfg.get("dataset", {})
    fill = int(dcfg.get("fill", 0))
    seg_map = project.segment_map()
    store = project.label_store()
    rgb = project.ortho_rgb()

    crops = ds.extract_crops(rgb, seg_map, store, fill=fill)
    crops, report = ds.filter_crops(crops, min_pixels=int(dcfg.get("min_pixels", 25)),
                                    reject=set(dcfg.get("reject", [])))
    side = int(dcfg.get("pad_side", 256))
    for crop in crops:
        crop.image = ds.pad_to_square(crop.image, side=side, fill=fill)
    crops = ds.split(crops, ds.SplitSpec(seed=int(dcfg.get("split_seed", 42))))

    acfg = dcfg.get("augment", {})
    spec = ds.AugmentSpec(
        copies=int(acfg.get("copies", 20)),
        rotation_deg=float(acfg.get("rotation_deg", 180.0)),
        shift_frac=float(acfg.get("shift_frac", 0.1)),
        shear_deg=float(acfg.get("shear_deg", 10.0)),
        zoom_range=tuple(acfg.get("zoom", (0.9, 1.1))),
        flip_h=bool(acfg.get("flip_h", True)),
        flip_v=bool(acfg.get("flip_v", True)),
        seed=int(acfg.get("seed", 42)),
    )
    crops = ds.augment_crops(crops, spec, fill=fill)
    manifest = ds.write_manifest(crops, project.root / "crops")
    per_split: dict[str, int] = {}
    for crop in crops:
        per_split[crop.split] = per_split.get(crop.split, 0) + 1
    return {"manifest": str(manifest), "filter_report": report,
            "crop_counts": per_split}


def train_stage(project: Project, cfg: dict) -> dict:
    ccfg = cfg.get("classifier", {})
    model_cfg = ModelConfig(
        input_side=int(ccfg.get("input_side", 64)),
        conv_channels=tuple(ccfg.get("conv_channels", (16, 32, 64))),
        kernel=int(ccfg.get("kernel", 3)),
        pool=int(ccfg.get("pool", 2)),
        hidden=int(ccfg.get("hidden", 64)),
        num_classes=int(ccfg.get("num_classes", 7)),
    )
    train_cfg = TrainConfig(
        epochs=int(ccfg.get("epochs", 30)),
        base_lr=float(ccfg.get("base_lr", 0.01)),
        momentum=float(ccfg.get("momentum", 0.9)),
        step_size_pct=int(ccfg.get("step_size_pct", 33)),
        gamma=float(ccfg.get("gamma", 0.1)),
        batch_size=int(ccfg.get("batch_size", 32)),
        seed=int(ccfg.get("seed", 42)),
    )
    model = train_manifest(project.manifest_path, model_cfg, train_cfg)
    model_path = project.root / "model.bin"
    save_model(model_path, model)
    write_history_csv(project.root / "history.csv", model)
    return {"model": str(model_path), "history": str(project.root / "history.csv"),
            "final": model.history[-1]}


def eval_stage(project: Project, split: str = "test",
               model_path=None) -> dict:
    model = load_model(model_path or project.root / "model.bin")
    rows = [r for r in ds.read_manifest(project.manifest_path) if r.split == split]
    if not rows:
        raise ProjectError(f"manifest has no rows in split {split!r}")
    images = ds.load_manifest_images(project.manifest_path, rows)
    images = prepare_images(images, model.config.input_side)
    preds = []
    for start in range(0, len(images), 256):
        probs = model.predict_proba(images[start:start + 256])
        preds.extend(model.classes[i] for i in probs.argmax(axis=1))
    truth = [r.class_id for r in rows]
    matrix = ev.confusion(truth, preds, model.classes)
    report = ev.report_dict(matrix)
    (project.root / "report.json").write_text(json.dumps(report, indent=2))
    text = ev.format_report(matrix)
    (project.root / "report.txt").write_text(text + "\n")
    return report


def run_pipeline(cfg: dict) -> dict:
    """All stages, in order, from one config. Returns a summary."""
    project = build_project(cfg)
    truth = cfg.get("labeling", {}).get("truth_raster")
    if truth:
        labeled = autolabel_from_truth(project, truth)
        log.info("auto-labeled %d segments from %s", labeled, truth)
    elif not project.labels_path.exists():
        raise ProjectError(
            "no labels: provide labeling.truth_raster or label via the service first")
    gt = export_ground_truth_stage(project)
    data = build_dataset_stage(project, cfg)
    trained = train_stage(project, cfg)
    report = eval_stage(project, "test")
    return {
        "project": str(project.root),
        "ground_truth": gt,
        "dataset": data,
        "training": trained,
        "overall_accuracy": report["overall_accuracy"],
        "report": str(project.root / "report.json"),
    }
