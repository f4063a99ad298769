"""Dataset loading and edit-view sampling."""

import json
import math

import numpy as np
import pytest
from PIL import Image

from iceg.dataset import load_dataset, sample_edit_views, save_dataset
from iceg.errors import DatasetError, ParameterError, SceneFormatError, ViewLoadError
from iceg.rasterize import look_at_c2w


def write_manifest(root, n_frames, width=8, height=6, camera_angle_x=0.8, rgba=False, sizes=None):
    (root / "views").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    frames = []
    for i in range(n_frames):
        w, h = (width, height) if sizes is None else sizes[i]
        px = rng.integers(0, 256, (h, w, 4 if rgba else 3), dtype=np.uint8)
        Image.fromarray(px, mode="RGBA" if rgba else "RGB").save(root / "views" / f"r_{i}.png")
        eye = (4.0 * math.cos(i), 4.0 * math.sin(i), 1.0)
        frames.append({"file_path": f"./views/r_{i}", "transform_matrix": look_at_c2w(eye).tolist()})
    manifest = {"camera_angle_x": camera_angle_x, "frames": frames}
    (root / "transforms.json").write_text(json.dumps(manifest))
    return root


def test_manifest_count_and_order_preserved(tmp_path):
    write_manifest(tmp_path, 100)
    ds = load_dataset(tmp_path)
    assert len(ds) == 100
    assert ds.view_ids() == [f"r_{i}" for i in range(100)]


def test_focal_from_camera_angle_matches_pinhole_formula(tmp_path):
    write_manifest(tmp_path, 2, width=800, height=4, camera_angle_x=0.6911)
    ds = load_dataset(tmp_path)
    expected = 0.5 * 800 / math.tan(0.6911 / 2.0)  # independent pinhole relation
    for _, pose in ds.views:
        assert pose.focal == pytest.approx(expected, rel=1e-12)


def test_empty_frame_list_is_dataset_error(tmp_path):
    (tmp_path / "transforms.json").write_text(json.dumps({"camera_angle_x": 0.8, "frames": []}))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_missing_manifest_is_format_error(tmp_path):
    with pytest.raises(SceneFormatError):
        load_dataset(tmp_path)


def test_malformed_json_is_format_error(tmp_path):
    (tmp_path / "transforms.json").write_text("{nope")
    with pytest.raises(SceneFormatError):
        load_dataset(tmp_path)


def test_unreadable_image_names_offending_file(tmp_path):
    write_manifest(tmp_path, 3)
    bad = tmp_path / "views" / "r_1.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(ViewLoadError) as exc:
        load_dataset(tmp_path)
    assert "r_1.png" in exc.value.path


def test_inconsistent_resolutions_rejected(tmp_path):
    write_manifest(tmp_path, 3, sizes=[(8, 6), (8, 6), (10, 6)])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_rgba_sources_composite_over_white(tmp_path):
    (tmp_path / "views").mkdir(parents=True)
    px = np.zeros((4, 4, 4), dtype=np.uint8)
    px[..., 0] = 255  # pure red, fully transparent
    px[..., 3] = 0
    Image.fromarray(px, mode="RGBA").save(tmp_path / "views" / "r_0.png")
    Image.fromarray(px, mode="RGBA").save(tmp_path / "views" / "r_1.png")
    frames = [{"file_path": f"./views/r_{i}", "transform_matrix": look_at_c2w((4, 0, 1)).tolist()} for i in range(2)]
    (tmp_path / "transforms.json").write_text(json.dumps({"camera_angle_x": 0.8, "frames": frames}))
    ds = load_dataset(tmp_path)
    assert np.allclose(ds.views[0][0].pixels, 1.0)  # transparent -> white


def test_non_orthonormal_pose_rejected(tmp_path):
    write_manifest(tmp_path, 2)
    manifest = json.loads((tmp_path / "transforms.json").read_text())
    manifest["frames"][0]["transform_matrix"][0][0] = 2.0
    (tmp_path / "transforms.json").write_text(json.dumps(manifest))
    with pytest.raises(ParameterError):
        load_dataset(tmp_path)


def test_dataset_roundtrip_preserves_pixels_and_poses(tmp_path):
    write_manifest(tmp_path, 4)
    ds = load_dataset(tmp_path)
    out = tmp_path / "copy"
    save_dataset(ds, out)
    ds2 = load_dataset(out)
    assert ds2.view_ids() == ds.view_ids()
    for (v1, p1), (v2, p2) in zip(ds.views, ds2.views):
        assert np.array_equal(v1.pixels, v2.pixels)  # bit-exact for 8-bit sources
        assert np.abs(p1.c2w - p2.c2w).max() <= 1e-7
        assert p1.focal == pytest.approx(p2.focal, rel=1e-9)


class TestSampling:
    def _dataset(self, tmp_path, n):
        write_manifest(tmp_path, n)
        return load_dataset(tmp_path)

    def test_twenty_percent_of_hundred(self, tmp_path):
        ds = self._dataset(tmp_path, 100)
        ids = sample_edit_views(ds, 0.2, seed=7)
        assert len(ids) == 20
        assert len(set(ids)) == 20

    def test_full_fraction_returns_all(self, tmp_path):
        ds = self._dataset(tmp_path, 9)
        assert sorted(sample_edit_views(ds, 1.0, seed=123)) == sorted(ds.view_ids())

    def test_deterministic(self, tmp_path):
        ds = self._dataset(tmp_path, 50)
        a = sample_edit_views(ds, 0.05, seed=3)
        b = sample_edit_views(ds, 0.05, seed=3)
        assert a == b

    def test_ceil_rounding_yields_at_least_one(self, tmp_path):
        ds = self._dataset(tmp_path, 30)
        assert len(sample_edit_views(ds, 0.05, seed=1)) == 2  # ceil(1.5)
        assert len(sample_edit_views(ds, 0.001, seed=1)) == 1

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_bad_fraction_rejected(self, tmp_path, fraction):
        ds = self._dataset(tmp_path, 5)
        with pytest.raises(ParameterError):
            sample_edit_views(ds, fraction, seed=0)

    def test_different_seeds_differ(self, tmp_path):
        ds = self._dataset(tmp_path, 50)
        draws = {tuple(sample_edit_views(ds, 0.2, seed=s)) for s in range(8)}
        assert len(draws) > 1
