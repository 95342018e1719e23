"""Batch command line for every pipeline stage plus one-shot runs.

Every subcommand is a thin wrapper over the library, is idempotent for
fixed inputs and seeds, and reports runtime failures as a JSON object on
stderr with exit code 1 (usage problems exit 2).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import project as pj
from . import synth
from .classifier import ModelConfig, TrainConfig, load_model, save_model, train_manifest, write_history_csv
from .grids import load_ascii_grid, write_ascii_grid
from .terrain import slope as derive_slope

log = logging.getLogger(__name__)

_ERRORS = Exception  # every library error surfaces as a JSON line + exit 1


def _fail(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    sys.exit(1)


@click.group()
@click.option("--verbose", is_flag=True, help="Log stage progress to stderr.")
def main(verbose: bool):
    """Tree crown segmentation, labeling and classification pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("slope")
@click.option("--dem", "dem_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def slope_cmd(dem_path, out_path):
    """Derive the slope layer (degrees) from an elevation raster."""
    try:
        band = derive_slope(load_ascii_grid(dem_path))
        write_ascii_grid(out_path, band)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({"slope": out_path}))


def _parse_weights(text: str | None):
    if text is None:
        return None
    return [float(v) for v in text.split(",")]


@main.command("segment")
@click.option("--ortho", required=True, type=click.Path(exists=True))
@click.option("--dem", required=True, type=click.Path(exists=True))
@click.option("--slope", "slope_path", type=click.Path(exists=True),
              help="Precomputed slope raster; derived from the DEM when omitted.")
@click.option("--scale", default=200.0, show_default=True)
@click.option("--shape", default=0.2, show_default=True)
@click.option("--compactness", default=0.5, show_default=True)
@click.option("--weights", default=None, help="Layer weights, e.g. 1,1,1,2,3.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def segment_cmd(ortho, dem, slope_path, scale, shape, compactness, weights, out_dir):
    """Segment the scene into crown objects; writes a project directory."""
    cfg = {
        "version": 1,
        "ortho": str(Path(ortho).resolve()),
        "dem": str(Path(dem).resolve()),
        "slope": str(Path(slope_path).resolve()) if slope_path else None,
        "weights": _parse_weights(weights),
        "workdir": out_dir,
        "segmentation": {"scale": scale, "shape": shape, "compactness": compactness},
    }
    try:
        project = pj.build_project(cfg)
        seg_map = project.segment_map()
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({"project": str(project.root),
                           "segments": seg_map.segment_count}))


@main.command("label")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--serve", "do_serve", is_flag=True, help="Start the labeling service.")
@click.option("--port", default=None, type=int,
              help="Service port (default 8964 or $CROWNPIPE_PORT).")
def label_cmd(project_dir, do_serve, port):
    """Serve the interactive labeling UI, or print labeling progress."""
    from .service import serve

    try:
        project = pj.Project(root=Path(project_dir))
        project.meta()
        if do_serve:
            serve(project_dir, port=port)
            return
        store = project.label_store()
        by_prov: dict[str, int] = {}
        for rec in store.records().values():
            by_prov[rec.provenance] = by_prov.get(rec.provenance, 0) + 1
        click.echo(json.dumps({"project": project_dir,
                               "segments": project.segment_map().segment_count,
                               "labeled": by_prov}))
    except _ERRORS as exc:
        _fail(exc)


@main.command("autolabel")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--truth", required=True, type=click.Path(exists=True),
              help="Class-id raster to vote segment labels from.")
def autolabel_cmd(project_dir, truth):
    """Label every segment by majority vote over a truth raster."""
    try:
        count = pj.autolabel_from_truth(pj.Project(root=Path(project_dir)), truth)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({"labeled": count}))


@main.command("extract")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--min-pixels", default=25, show_default=True)
@click.option("--pad-side", default=256, show_default=True)
@click.option("--fill", default=0, show_default=True)
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Crops directory (default <project>/crops).")
def extract_cmd(project_dir, min_pixels, pad_side, fill, out_dir):
    """Extract masked, padded chips for every labeled segment."""
    try:
        project = pj.Project(root=Path(project_dir))
        seg_map = project.segment_map()
        store = project.label_store()
        crops = ds.extract_crops(project.ortho_rgb(), seg_map, store, fill=fill)
        crops, report = ds.filter_crops(crops, min_pixels=min_pixels)
        for crop in crops:
            crop.image = ds.pad_to_square(crop.image, side=pad_side, fill=fill)
        out = Path(out_dir) if out_dir else project.root / "crops"
        manifest = ds.write_manifest(crops, out, require_split=False)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({"manifest": str(manifest),
                           "per_class": {str(k): v for k, v in report.items()}}))


@main.command("split")
@click.option("--crops", "crops_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", default=42, show_default=True)
def split_cmd(crops_dir, seed):
    """Assign train/val/test tags in a crops manifest."""
    try:
        counts = ds.retag_manifest(Path(crops_dir) / "manifest.csv", seed)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps(counts))


@main.command("augment")
@click.option("--crops", "crops_dir", required=True, type=click.Path(exists=True))
@click.option("--copies", default=20, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--fill", default=0, show_default=True)
def augment_cmd(crops_dir, copies, seed, fill):
    """Multiply train/val chips of the tree classes by affine copies."""
    try:
        spec = ds.AugmentSpec(copies=copies, seed=seed)
        counts = ds.augment_manifest(Path(crops_dir) / "manifest.csv", spec, fill=fill)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({str(k): v for k, v in counts.items()}))


@main.command("train")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--epochs", default=30, show_default=True)
@click.option("--lr", default=0.01, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--input-side", default=64, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", "out_path", default="model.bin", show_default=True,
              type=click.Path())
def train_cmd(manifest, epochs, lr, batch_size, input_side, seed, out_path):
    """Train the classifier on a crops manifest."""
    try:
        model_cfg = ModelConfig(input_side=input_side)
        train_cfg = TrainConfig(epochs=epochs, base_lr=lr, batch_size=batch_size,
                                seed=seed)
        model = train_manifest(manifest, model_cfg, train_cfg)
        save_model(out_path, model)
        write_history_csv(Path(out_path).with_suffix(".history.csv"), model)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps({"model": out_path, "final": model.history[-1]}))


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--json-out", default=None, type=click.Path())
def eval_cmd(model_path, manifest, split, json_out):
    """Confusion matrix and accuracies of a trained model on one split."""
    from .classifier.train import prepare_images

    try:
        model = load_model(model_path)
        rows = [r for r in ds.read_manifest(manifest) if r.split == split]
        if not rows:
            raise pj.ProjectError(f"manifest has no rows in split {split!r}")
        images = prepare_images(ds.load_manifest_images(manifest, rows),
                                model.config.input_side)
        preds = []
        for start in range(0, len(images), 256):
            probs = model.predict_proba(images[start:start + 256])
            preds.extend(model.classes[i] for i in probs.argmax(axis=1))
        matrix = ev.confusion([r.class_id for r in rows], preds, model.classes)
        report = ev.report_dict(matrix)
        if json_out:
            Path(json_out).write_text(json.dumps(report, indent=2))
    except _ERRORS as exc:
        _fail(exc)
    click.echo(ev.format_report(matrix))


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def pipeline_cmd(config_path):
    """Run every stage from a declarative JSON config."""
    try:
        cfg = pj.load_config(config_path)
        summary = pj.run_pipeline(cfg)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps(summary, indent=2))


@main.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--side", default=512, show_default=True)
@click.option("--crowns", default=55, show_default=True,
              help="Crowns per artificial species.")
@click.option("--seed", default=42, show_default=True)
def synth_cmd(out_dir, side, crowns, seed):
    """Generate the synthetic demo scene plus a ready pipeline config."""
    try:
        paths = synth.generate_scene(out_dir, side=side, crowns_per_species=crowns,
                                     seed=seed)
        cfg = synth.default_pipeline_config(out_dir, Path(out_dir) / "run")
        cfg_path = Path(out_dir) / "crownpipe.json"
        cfg_path.write_text(json.dumps(cfg, indent=2))
        paths["config"] = str(cfg_path)
    except _ERRORS as exc:
        _fail(exc)
    click.echo(json.dumps(paths, indent=2))


if __name__ == "__main__":
    main()
