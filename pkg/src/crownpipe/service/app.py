"""Local HTTP API for the interactive ground-truth labeling loop.

Single project, single analyst, no auth: the UI (or any script) views the
orthomosaic and segment rasters, posts labels, triggers nearest-neighbor
propagation, merges badly split segments and finally exports the ground
truth plus the crop dataset. All mutations are serialized through one lock
and journaled to the label store file, so a restarted service reproduces
the exact state.
"""

from __future__ import annotations

import io
import os
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .. import labeling as lb
from ..project import (Project, build_dataset_stage, export_ground_truth_stage,
                       ProjectError)
from ..segmentation import SegmentationError, manual_merge, write_label_raster, export_segment_records
from . import schemas as S

DEFAULT_PORT = 8964
PORT_ENV_VAR = "CROWNPIPE_PORT"
UI_ENV_VAR = "CROWNPIPE_UI_DIR"


class ServiceState:
    """In-memory view of one project, kept consistent with its files."""

    def __init__(self, project: Project):
        self.project = project
        self.lock = threading.Lock()
        self.meta = project.meta()
        self.stack = project.stack()
        self.seg_map = project.segment_map()
        self.store = project.label_store()
        self._features = None

    def features(self) -> lb.FeatureTable:
        if self._features is None:
            self._features = lb.segment_features(self.stack, self.seg_map)
        return self._features

    def invalidate(self) -> None:
        self._features = None


def _png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def _label_out(seg_id: int, record: lb.LabelRecord) -> S.LabelOut:
    return S.LabelOut(segment=seg_id, class_id=record.class_id,
                      provenance=record.provenance)


def create_app(project_dir, ui_dir=None) -> FastAPI:
    project = Project(root=Path(project_dir))
    state = ServiceState(project)
    app = FastAPI(title="crownpipe labeling service")
    app.state.ctx = state
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=r"https?://(localhost|127\.0\.0\.1)(:\d+)?",
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/project", response_model=S.ProjectInfo)
    def project_info():
        g = state.stack.grid
        labeled: dict[str, int] = {p: 0 for p in lb.PROVENANCES}
        for record in state.store.records().values():
            labeled[record.provenance] += 1
        return S.ProjectInfo(
            grid=S.GridInfo(width=g.width, height=g.height, origin_x=g.origin_x,
                            origin_y=g.origin_y, pixel_size=g.pixel_size),
            segment_count=state.seg_map.segment_count,
            labeled=labeled,
            classes=[S.ClassInfo(id=c.id, name=c.name, color=c.color)
                     for c in lb.TREE_CLASSES],
        )

    @app.get("/api/classes", response_model=list[S.ClassInfo])
    def classes():
        return [S.ClassInfo(id=c.id, name=c.name, color=c.color)
                for c in lb.TREE_CLASSES]

    @app.get("/api/ortho.png")
    def ortho_png():
        return Response(content=_png_bytes(state.project.ortho_rgb()),
                        media_type="image/png")

    @app.get("/api/segments.png")
    def segments_png():
        ids = state.seg_map.labels.astype(np.uint32)
        rgb = np.empty((*ids.shape, 3), dtype=np.uint8)
        rgb[:, :, 0] = (ids >> 16) & 0xFF
        rgb[:, :, 1] = (ids >> 8) & 0xFF
        rgb[:, :, 2] = ids & 0xFF
        return Response(content=_png_bytes(rgb), media_type="image/png")

    @app.get("/api/segments/{seg_id}", response_model=S.SegmentInfo)
    def segment_info(seg_id: int):
        try:
            stats = state.seg_map.require(seg_id)
        except SegmentationError:
            raise HTTPException(404, {"error": "unknown segment", "segment": seg_id})
        record = state.store.get(seg_id)
        return S.SegmentInfo(
            id=seg_id, n=stats.n, perimeter=stats.perimeter, bbox=stats.bbox,
            mean=[float(v) for v in stats.mean], std=[float(v) for v in stats.std],
            label=None if record is None else _label_out(seg_id, record),
        )

    @app.get("/api/labels", response_model=list[S.LabelOut])
    def labels():
        return [_label_out(sid, rec)
                for sid, rec in sorted(state.store.records().items())]

    @app.post("/api/labels", response_model=S.LabelOut)
    def post_label(body: S.LabelIn):
        with state.lock:
            if body.segment not in state.seg_map.stats:
                raise HTTPException(404, {"error": "unknown segment",
                                          "segment": body.segment})
            try:
                existing = state.store.get(body.segment)
                if existing is not None and existing.provenance == "predicted":
                    state.store.correct(body.segment, body.class_id)
                else:
                    state.store.set_sample(body.segment, body.class_id)
            except lb.LabelingError as exc:
                raise HTTPException(422, {"error": str(exc)})
            state.store.append_to(project.labels_path, body.segment)
            return _label_out(body.segment, state.store.get(body.segment))

    @app.post("/api/nn/run", response_model=S.NNRunOut)
    def nn_run():
        with state.lock:
            try:
                predictions = lb.nn_classify(state.features(), state.store)
            except lb.LabelingError as exc:
                raise HTTPException(409, {"error": str(exc)})
            state.store.save(project.labels_path)
        per_class: dict[int, int] = {}
        for cls in predictions.values():
            per_class[cls] = per_class.get(cls, 0) + 1
        return S.NNRunOut(predicted=len(predictions), per_class=per_class)

    @app.post("/api/segments/merge", response_model=S.MergeOut)
    def merge_segments(body: S.MergeIn):
        with state.lock:
            try:
                merged = manual_merge(state.seg_map, body.ids)
            except SegmentationError as exc:
                status = 404 if "unknown segment" in str(exc) else 422
                raise HTTPException(status, {"error": str(exc)})
            keep = min(body.ids)
            removed = sorted(set(body.ids) - {keep})
            state.seg_map = merged
            state.invalidate()
            # the absorbed ids' labels no longer apply
            for sid in removed:
                state.store.drop(sid)
            write_label_raster(merged, project.root / "segments.asc")
            export_segment_records(merged, project.root / "segments.csv",
                                   state.stack.names)
            state.store.save(project.labels_path)
            return S.MergeOut(merged_into=keep, removed=removed,
                              segment_count=merged.segment_count)

    @app.post("/api/export", response_model=S.ExportOut)
    def export():
        with state.lock:
            try:
                gt = export_ground_truth_stage(project)
                data = build_dataset_stage(project, state.meta.get("config", {}))
            except lb.UnlabeledSegmentsError as exc:
                raise HTTPException(409, {"error": "unlabeled segments remain",
                                          "segments": exc.ids})
            except (ProjectError, lb.LabelingError) as exc:
                raise HTTPException(422, {"error": str(exc)})
        per_class = {cls: after for cls, (_, after) in data["filter_report"].items()}
        return S.ExportOut(ground_truth=gt["ground_truth"], legend=gt["legend"],
                           manifest=data["manifest"], per_class_counts=per_class)

    ui_dir = ui_dir or os.environ.get(UI_ENV_VAR) or _default_ui_dir()
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def _default_ui_dir() -> str | None:
    candidate = Path(__file__).resolve().parents[3] / "frontend" / "dist"
    return str(candidate) if candidate.is_dir() else None


def serve(project_dir, port: int | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get(PORT_ENV_VAR, DEFAULT_PORT))
    uvicorn.run(create_app(project_dir), host=host, port=port)
