import io
import json
import shutil

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from crownpipe import labeling as lb
from crownpipe import project as pj
from crownpipe import synth
from crownpipe.service import create_app


@pytest.fixture(scope="session")
def scene_project(tmp_path_factory):
    """Small segmented scene with no labels yet."""
    base = tmp_path_factory.mktemp("scene")
    synth.generate_scene(base, side=96, crowns_per_species=3, seed=7)
    cfg = synth.default_pipeline_config(base, base / "proj")
    cfg["dataset"]["min_pixels"] = 16
    cfg["dataset"]["augment"]["copies"] = 1
    cfg["classifier"]["epochs"] = 1
    project = pj.build_project(cfg)
    return base, project


@pytest.fixture
def project_dir(scene_project, tmp_path):
    """Fresh mutable copy of the segmented project."""
    _, project = scene_project
    target = tmp_path / "proj"
    shutil.copytree(project.root, target)
    return target


@pytest.fixture
def client(project_dir):
    return TestClient(create_app(project_dir))


def majority_classes(scene_project):
    """True class of every segment by pixel vote over the synthetic truth."""
    base, project = scene_project
    seg_map = project.segment_map()
    truth = lb.load_ground_truth(base / "truth.asc")
    out = {}
    for sid in seg_map.ids():
        votes = np.bincount(truth[seg_map.labels == sid], minlength=8)[1:]
        out[sid] = int(votes.argmax()) + 1
    return out


class TestReads:
    def test_classes_legend(self, client):
        body = client.get("/api/classes").json()
        assert [c["id"] for c in body] == [1, 2, 3, 4, 5, 6, 7]
        assert body[0]["name"] == "deciduous broad-leaved tree"

    def test_project_info(self, client):
        body = client.get("/api/project").json()
        assert body["grid"]["width"] == 96
        assert body["segment_count"] > 4
        assert body["labeled"] == {"sample": 0, "predicted": 0, "corrected": 0}
        assert len(body["classes"]) == 7

    def test_ortho_png(self, client, scene_project):
        resp = client.get("/api/ortho.png")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(resp.content))
        assert img.size == (96, 96)

    def test_segments_png_decodes_losslessly(self, client, scene_project):
        _, project = scene_project
        resp = client.get("/api/segments.png")
        rgb = np.asarray(Image.open(io.BytesIO(resp.content)).convert("RGB"),
                         dtype=np.uint32)
        decoded = rgb[:, :, 0] * 65536 + rgb[:, :, 1] * 256 + rgb[:, :, 2]
        assert np.array_equal(decoded, project.segment_map().labels)

    def test_segment_info(self, client, scene_project):
        _, project = scene_project
        sid = project.segment_map().ids()[0]
        body = client.get(f"/api/segments/{sid}").json()
        assert body["id"] == sid
        assert body["n"] >= 1
        assert len(body["mean"]) == 5
        assert body["label"] is None

    def test_unknown_segment_404(self, client):
        resp = client.get("/api/segments/999999")
        assert resp.status_code == 404
        assert "unknown segment" in json.dumps(resp.json())


class TestLabels:
    def test_post_and_get(self, client, scene_project):
        _, project = scene_project
        sid = project.segment_map().ids()[0]
        resp = client.post("/api/labels", json={"segment": sid, "class": 4})
        assert resp.status_code == 200
        assert resp.json() == {"segment": sid, "class": 4, "provenance": "sample"}
        records = client.get("/api/labels").json()
        assert records == [{"segment": sid, "class": 4, "provenance": "sample"}]

    def test_unknown_segment_404(self, client):
        resp = client.post("/api/labels", json={"segment": 424242, "class": 1})
        assert resp.status_code == 404

    def test_bad_class_rejected(self, client, scene_project):
        _, project = scene_project
        sid = project.segment_map().ids()[0]
        resp = client.post("/api/labels", json={"segment": sid, "class": 12})
        assert resp.status_code == 422

    def test_durable_across_restart(self, project_dir):
        with TestClient(create_app(project_dir)) as client:
            sids = json.loads((project_dir / "segments.csv").read_text()
                              .splitlines()[1].split(",")[0])
            client.post("/api/labels", json={"segment": int(sids), "class": 2})
        with TestClient(create_app(project_dir)) as reborn:
            records = reborn.get("/api/labels").json()
        assert records == [{"segment": int(sids), "class": 2, "provenance": "sample"}]


class TestNNRun:
    def test_no_samples_409(self, client):
        assert client.post("/api/nn/run").status_code == 409

    def test_propagates_to_every_segment(self, client, scene_project):
        _, project = scene_project
        ids = project.segment_map().ids()
        client.post("/api/labels", json={"segment": ids[0], "class": 1})
        client.post("/api/labels", json={"segment": ids[-1], "class": 7})
        body = client.post("/api/nn/run").json()
        assert body["predicted"] == len(ids) - 2
        assert sum(body["per_class"].values()) == body["predicted"]
        records = client.get("/api/labels").json()
        assert len(records) == len(ids)

    def test_never_touches_human_records(self, client, scene_project):
        _, project = scene_project
        ids = project.segment_map().ids()
        client.post("/api/labels", json={"segment": ids[0], "class": 1})
        client.post("/api/labels", json={"segment": ids[1], "class": 5})
        client.post("/api/nn/run")
        # correct one prediction, then rerun
        predicted = next(r for r in client.get("/api/labels").json()
                         if r["provenance"] == "predicted")
        client.post("/api/labels", json={"segment": predicted["segment"], "class": 3})
        client.post("/api/nn/run")
        records = {r["segment"]: r for r in client.get("/api/labels").json()}
        assert records[ids[0]] == {"segment": ids[0], "class": 1, "provenance": "sample"}
        assert records[predicted["segment"]]["class"] == 3
        assert records[predicted["segment"]]["provenance"] == "corrected"


class TestMerge:
    def test_merge_adjacent(self, client, scene_project):
        _, project = scene_project
        seg_map = project.segment_map()
        sid = next(s for s in seg_map.ids() if seg_map.adjacency[s])
        nb = min(seg_map.adjacency[sid])
        before = seg_map.segment_count
        body = client.post("/api/segments/merge", json={"ids": [sid, nb]}).json()
        assert body["merged_into"] == min(sid, nb)
        assert body["segment_count"] == before - 1
        # the merged raster is served immediately
        resp = client.get(f"/api/segments/{max(sid, nb)}")
        assert resp.status_code == 404

    def test_disconnected_rejected(self, client, scene_project):
        _, project = scene_project
        seg_map = project.segment_map()
        ids = seg_map.ids()
        far = [i for i in ids if i != ids[0] and i not in seg_map.adjacency[ids[0]]]
        resp = client.post("/api/segments/merge", json={"ids": [ids[0], far[-1]]})
        assert resp.status_code == 422

    def test_merge_persists_across_restart(self, project_dir):
        with TestClient(create_app(project_dir)) as client:
            info = client.get("/api/project").json()
            labels_resp = client.get("/api/segments.png")
            rgb = np.asarray(Image.open(io.BytesIO(labels_resp.content)).convert("RGB"),
                             dtype=np.uint32)
            ids_raster = rgb[:, :, 0] * 65536 + rgb[:, :, 1] * 256 + rgb[:, :, 2]
            # find two adjacent ids on the raster
            a = ids_raster[0, 0]
            nb = None
            h, w = ids_raster.shape
            for r in range(h):
                for c in range(w):
                    if ids_raster[r, c] != a:
                        continue
                    for dr, dc in ((0, 1), (1, 0)):
                        rr, cc = r + dr, c + dc
                        if rr < h and cc < w and ids_raster[rr, cc] != a \
                                and ids_raster[rr, cc] > 0:
                            nb = ids_raster[rr, cc]
                            break
                    if nb:
                        break
                if nb:
                    break
            client.post("/api/segments/merge", json={"ids": [int(a), int(nb)]})
            count = client.get("/api/project").json()["segment_count"]
        with TestClient(create_app(project_dir)) as reborn:
            assert reborn.get("/api/project").json()["segment_count"] == count
        assert count == info["segment_count"] - 1


class TestExport:
    def test_unlabeled_segments_blocked(self, client):
        resp = client.post("/api/export")
        assert resp.status_code == 409
        assert resp.json()["detail"]["segments"]

    def test_export_after_full_labeling(self, client, scene_project, project_dir):
        classes = majority_classes(scene_project)
        ids = sorted(classes)
        client.post("/api/labels", json={"segment": ids[0], "class": classes[ids[0]]})
        client.post("/api/labels", json={"segment": ids[-1], "class": classes[ids[-1]]})
        client.post("/api/nn/run")
        body = client.post("/api/export").json()
        assert (project_dir / "ground_truth.asc").exists()
        assert (project_dir / "crops" / "manifest.csv").exists()
        assert body["per_class_counts"]


class TestUiLoopEquivalence:
    def label_plan(self, scene_project):
        """Two sample segments per present class, ordered by id."""
        classes = majority_classes(scene_project)
        per_class: dict[int, list[int]] = {}
        for sid in sorted(classes):
            per_class.setdefault(classes[sid], []).append(sid)
        return classes, {cls: sids[:2] for cls, sids in per_class.items()}

    def test_script_vs_library_identical_ground_truth(self, scene_project, tmp_path):
        _, project = scene_project
        truth_classes, plan = self.label_plan(scene_project)

        dir_a = tmp_path / "via_http"
        dir_b = tmp_path / "via_library"
        shutil.copytree(project.root, dir_a)
        shutil.copytree(project.root, dir_b)

        # --- drive the service exactly like the UI does
        with TestClient(create_app(dir_a)) as client:
            for cls, sids in plan.items():
                for sid in sids:
                    client.post("/api/labels", json={"segment": sid, "class": cls})
            client.post("/api/nn/run")
            records = {r["segment"]: r for r in client.get("/api/labels").json()}
            wrong = [sid for sid, rec in records.items()
                     if rec["provenance"] == "predicted"
                     and rec["class"] != truth_classes[sid]]
            if wrong:
                sid = min(wrong)
                client.post("/api/labels",
                            json={"segment": sid, "class": truth_classes[sid]})
                client.post("/api/nn/run")
            client.post("/api/export")

        # --- same calls through the library
        proj_b = pj.Project(root=dir_b)
        seg_map = proj_b.segment_map()
        stack = proj_b.stack()
        store = lb.LabelStore()
        for cls, sids in plan.items():
            for sid in sids:
                store.set_sample(sid, cls)
        table = lb.segment_features(stack, seg_map)
        lb.nn_classify(table, store)
        wrong = [sid for sid, rec in store.records().items()
                 if rec.provenance == "predicted"
                 and rec.class_id != truth_classes[sid]]
        if wrong:
            sid = min(wrong)
            lb.apply_correction(store, seg_map, sid, truth_classes[sid])
            lb.nn_classify(table, store)
        store.save(proj_b.labels_path)
        pj.export_ground_truth_stage(proj_b)

        raster_a = lb.load_ground_truth(dir_a / "ground_truth.asc")
        raster_b = lb.load_ground_truth(dir_b / "ground_truth.asc")
        assert np.array_equal(raster_a, raster_b)

        # human and corrected records survive propagation and a restart
        with TestClient(create_app(dir_a)) as reborn:
            records = {r["segment"]: r for r in reborn.get("/api/labels").json()}
        for cls, sids in plan.items():
            for sid in sids:
                assert records[sid]["class"] == cls
                assert records[sid]["provenance"] == "sample"
