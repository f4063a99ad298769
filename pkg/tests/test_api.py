"""HTTP API surface over the fixture project."""

import base64
import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

import helpers
from conftest import EDIT_VIEW, tiny_config

from iceg.server import create_app


@pytest.fixture
def api(fixture_project):
    app = create_app(fixture_project.root.parent)
    client = TestClient(app, raise_server_exceptions=False)
    return client, fixture_project


def scene_id(project):
    return project.root.name


def color_plan_body(project, with_config=True):
    cfg = tiny_config()
    plan, red_ids, _ = helpers.build_recolor_plan(project.load_scene(), cfg, EDIT_VIEW)
    style = {str(mid): {"mode": "color", "hue": 280.0, "sat": 0.7} for mid in red_ids}
    body = {
        "scene_id": scene_id(project),
        "plan": {"edit_image": f"view:{EDIT_VIEW}", "style": style, "max_masks": cfg.max_masks},
    }
    if with_config:
        body["config"] = {"color_iters": 15, "texture_iters": 10, "checkpoint_every": 5, "max_masks": cfg.max_masks}
    return body


def test_scene_listing(api):
    client, project = api
    r = client.get("/api/scenes")
    assert r.status_code == 200
    scenes = r.json()
    assert len(scenes) == 1
    assert scenes[0]["id"] == scene_id(project)
    assert scenes[0]["n_views"] == 30
    assert scenes[0]["width"] == 64


def test_view_listing_and_png(api):
    client, project = api
    r = client.get(f"/api/scenes/{scene_id(project)}/views")
    assert r.status_code == 200
    assert len(r.json()["view_ids"]) == 30
    png = client.get(f"/api/scenes/{scene_id(project)}/views/r_000.png")
    assert png.status_code == 200
    assert png.headers["content-type"] == "image/png"
    assert png.content[:4] == b"\x89PNG"


def test_unknown_scene_and_view_codes(api):
    client, project = api
    r = client.get("/api/scenes/ghost/views")
    assert r.status_code == 404
    assert r.json()["code"] == "SCENE_NOT_FOUND"
    r = client.get(f"/api/scenes/{scene_id(project)}/views/r_999.png")
    assert r.status_code == 404
    assert r.json()["code"] == "VIEW_NOT_FOUND"


def test_stateless_reads_return_identical_bytes(api):
    client, project = api
    url = f"/api/scenes/{scene_id(project)}/views/r_003.png"
    assert client.get(url).content == client.get(url).content


def test_segment_endpoint_returns_maskset_and_label_map(api):
    client, project = api
    r = client.post("/api/segment", json={"scene_id": scene_id(project), "view_id": "r_000", "max_masks": 5})
    assert r.status_code == 200
    body = r.json()
    assert body["view_id"] == "r_000"
    assert len(body["mask_ids"]) <= 5
    assert sum(body["areas"]) == 64 * 64
    from PIL import Image

    label = np.asarray(Image.open(io.BytesIO(base64.b64decode(body["label_map_png_b64"]))))
    assert label.shape == (64, 64)
    assert set(np.unique(label)) == set(body["mask_ids"])


def test_match_endpoint(api):
    client, project = api
    r = client.post(
        "/api/match",
        json={"scene_id": scene_id(project), "view_id": "r_010", "edit_image_ref": f"view:{EDIT_VIEW}"},
    )
    assert r.status_code == 200
    entries = r.json()["entries"]
    assert entries  # every target mask got an edit id + distance
    for edit_id, dist in entries.values():
        assert dist >= 0.0


def test_preview_of_empty_plan_returns_original_view(api):
    client, project = api
    r = client.post(
        "/api/preview",
        json={
            "scene_id": scene_id(project),
            "view_id": "r_002",
            "plan": {"edit_image": f"view:{EDIT_VIEW}", "style": {}},
        },
    )
    assert r.status_code == 200
    original = client.get(f"/api/scenes/{scene_id(project)}/views/r_002.png").content
    assert r.content == original


def test_invalid_plan_gets_422_plan_invalid(api):
    client, project = api
    r = client.post("/api/jobs", json={"scene_id": scene_id(project), "plan": {"style": {}}})
    assert r.status_code == 422
    assert r.json()["code"] == "PLAN_INVALID"
    r = client.post(
        "/api/jobs",
        json={
            "scene_id": scene_id(project),
            "plan": {"edit_image": f"view:{EDIT_VIEW}", "style": {"99": {"mode": "color", "hue": 1, "sat": 1}}},
        },
    )
    assert r.status_code == 422
    assert r.json()["code"] == "PLAN_INVALID"


def test_unknown_job_is_404(api):
    client, _ = api
    r = client.get("/api/jobs/ghost")
    assert r.status_code == 404
    assert r.json()["code"] == "JOB_NOT_FOUND"


def poll_until_done(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/api/jobs/{job_id}").json()
        if record["state"] in ("DONE", "FAILED"):
            return record
        time.sleep(0.3)
    raise AssertionError("job did not finish in time")


def test_job_flow_and_cross_path_preview_consistency(api):
    client, project = api
    body = color_plan_body(project)
    submitted = client.post("/api/jobs", json=body)
    assert submitted.status_code == 202
    job_id = submitted.json()["job_id"]

    record = poll_until_done(client, job_id)
    assert record["state"] == "DONE", record.get("failure")
    assert record["stages_skipped"] == ["TRAINING_TEXTURE"]

    vid = record["sampled_view_ids"][0]
    edit_png = client.get(f"/api/jobs/{job_id}/edits/{vid}.png")
    assert edit_png.status_code == 200
    preview = client.post(
        "/api/preview",
        json={"scene_id": body["scene_id"], "view_id": vid, "plan": body["plan"], "config": body["config"]},
    )
    assert preview.status_code == 200
    assert preview.content == edit_png.content  # byte-identical PNG payloads

    render = client.get(f"/api/jobs/{job_id}/renders/{vid}.png")
    assert render.status_code == 200
    assert render.content[:4] == b"\x89PNG"


def test_job_conflict_on_duplicate_id(api):
    client, project = api
    body = color_plan_body(project)
    body["job_id"] = "fixed-id"
    first = client.post("/api/jobs", json=body)
    assert first.status_code == 202
    second = client.post("/api/jobs", json=body)
    assert second.status_code == 409
    assert second.json()["code"] == "JOB_CONFLICT"
    poll_until_done(client, "fixed-id")


def test_config_override_validation(api):
    client, project = api
    body = color_plan_body(project)
    body["config"]["bogus_knob"] = 1
    r = client.post("/api/jobs", json=body)
    assert r.status_code == 422
    assert r.json()["code"] == "PARAM_INVALID"
