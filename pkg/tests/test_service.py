import base64
import json
import math
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from roifield import geometry, renderer, scenes
from roifield.service import create_app


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    app = create_app(jobs_dir=tmp_path_factory.mktemp("jobs"))
    with TestClient(app) as c:
        yield c


EXAMPLE_POSE = {
    "position": [3.0, 0.0, 0.0],
    "look_at": [0.0, 0.0, 0.0],
    "afov_deg": 60.0,
}
EXAMPLE_BOX = {"center": [0.0, 0.0, 0.0], "dims": [2.0, 2.0, 2.0]}


class TestScenes:
    def test_lists_demo(self, client):
        scenes_list = client.get("/scenes").json()
        assert any(s["id"] == "demo" for s in scenes_list)
        demo = next(s for s in scenes_list if s["id"] == "demo")
        assert demo["scene_type"] == "full-orbit"


class TestRender:
    def test_repeat_requests_identical_bytes(self, client):
        params = {"scene": "demo", "pose": json.dumps(EXAMPLE_POSE), "res": 24}
        a = client.get("/render", params=params).json()
        b = client.get("/render", params=params).json()
        assert a["png_base64"] == b["png_base64"]
        assert a["depth_f32_base64"] == b["depth_f32_base64"]

    def test_default_pose_used_when_missing(self, client):
        r = client.get("/render", params={"scene": "demo", "res": 16})
        assert r.status_code == 200
        body = r.json()
        assert body["width"] == body["height"] == 16
        depth = np.frombuffer(base64.b64decode(body["depth_f32_base64"]), dtype="<f4")
        assert depth.shape == (16 * 16,)

    def test_unknown_scene_404(self, client):
        r = client.get("/render", params={"scene": "nope"})
        assert r.status_code == 404

    def test_invalid_pose_400(self, client):
        bad = dict(EXAMPLE_POSE, position=[0.0, 0.0, 0.0], look_at=[0.0, 0.0, 0.0])
        r = client.get("/render", params={"scene": "demo", "pose": json.dumps(bad)})
        assert r.status_code == 400

    def test_oversized_resolution_400(self, client):
        r = client.get("/render", params={"scene": "demo", "res": 4096})
        assert r.status_code == 400

    def test_matches_direct_engine_render(self, client):
        res = 20
        body = client.get(
            "/render",
            params={"scene": "demo", "pose": json.dumps(EXAMPLE_POSE), "res": res},
        ).json()
        scene = scenes.load_scene("demo")
        pose = scenes.pose_from_dict(EXAMPLE_POSE)
        with torch.no_grad():
            out = renderer.render_view(
                scene.load_field(), pose, res, scene.render_settings()
            )
        from roifield import imageio

        assert body["png_base64"] == imageio.b64_png(out.rgb_array())


class TestRoiProjection:
    def test_passthrough_matches_engine(self, client):
        res = 32
        req = {
            "scene": "demo",
            "pose": EXAMPLE_POSE,
            "box": EXAMPLE_BOX,
            "resolution": res,
            "samples_per_edge": 6,
        }
        body = client.post("/roi", json=req).json()

        scene = scenes.load_scene("demo")
        pose = scenes.pose_from_dict(EXAMPLE_POSE)
        box = geometry.RoiBox(**{"center": EXAMPLE_BOX["center"], "dims": EXAMPLE_BOX["dims"]})
        with torch.no_grad():
            out = renderer.render_view(
                scene.load_field(), pose, res, scene.render_settings()
            )
        depth = renderer.occlusion_depth(out, scene.far)
        expected = geometry.project_box_edges(box, pose, depth, 6)
        got = body["samples"]
        assert len(got) == len(expected)
        for g, e in zip(got, expected):
            assert g["edge"] == e.edge
            assert g["visible"] == e.visible
            assert np.allclose(g["pixel"], e.pixel)

    def test_invalid_box_400(self, client):
        req = {
            "scene": "demo",
            "pose": EXAMPLE_POSE,
            "box": {"center": [0, 0, 0], "dims": [0.0, 1.0, 1.0]},
        }
        assert client.post("/roi", json=req).status_code == 400


def _edit_request(edit_id=None, steps=4):
    return {
        "scene": "demo",
        "box": {"center": [0.0, 1.2, 0.0], "dims": [0.8, 0.8, 0.8]},
        "caption": "a tiny test disc",
        "steps": steps,
        "render_resolution": 12,
        "n_samples": 8,
        "edit_id": edit_id,
    }


def _wait_done(client, edit_id, timeout=120.0):
    deadline = time.time() + timeout
    last = None
    while time.time() < deadline:
        last = client.get(f"/edits/{edit_id}/status").json()
        if last["state"] != "running":
            return last
        time.sleep(0.1)
    raise AssertionError(f"job did not finish: {last}")


class TestEditJobs:
    def test_lifecycle_and_monotone_steps(self, client):
        created = client.post("/edits", json=_edit_request(edit_id="job-a", steps=6))
        assert created.status_code == 200
        assert created.json()["id"] == "job-a"
        seen = []
        for _ in range(200):
            status = client.get("/edits/job-a/status").json()
            seen.append(status["step"])
            if status["state"] != "running":
                break
            time.sleep(0.05)
        final = _wait_done(client, "job-a")
        assert final["state"] == "done", final
        assert final["step"] == 6
        assert seen == sorted(seen)
        assert final["losses"] is not None and "l_sim" in final["losses"]

    def test_render_after_done(self, client):
        client.post("/edits", json=_edit_request(edit_id="job-b", steps=3))
        _wait_done(client, "job-b")
        r = client.get(
            "/edits/job-b/render",
            params={"pose": json.dumps(EXAMPLE_POSE), "res": 16},
        )
        assert r.status_code == 200
        assert r.json()["width"] == 16

    def test_conflict_on_running_duplicate(self, client):
        first = client.post("/edits", json=_edit_request(edit_id="job-c", steps=60))
        assert first.status_code == 200
        second = client.post("/edits", json=_edit_request(edit_id="job-c", steps=2))
        assert second.status_code == 409
        _wait_done(client, "job-c")

    def test_jobs_are_isolated(self, client):
        client.post("/edits", json=_edit_request(edit_id="iso-1", steps=3))
        client.post("/edits", json=_edit_request(edit_id="iso-2", steps=3))
        a = _wait_done(client, "iso-1")
        b = _wait_done(client, "iso-2")
        assert a["id"] == "iso-1" and b["id"] == "iso-2"
        assert a["state"] == "done" and b["state"] == "done"

    def test_unknown_edit_404(self, client):
        assert client.get("/edits/missing/status").status_code == 404

    def test_box_outside_bounds_400(self, client):
        req = _edit_request(edit_id="bad-box")
        req["box"] = {"center": [10.0, 0, 0], "dims": [1, 1, 1]}
        assert client.post("/edits", json=req).status_code == 400
