"""Rasterizer correctness: closed forms, compositing order, culling, modes."""

import math

import numpy as np
import pytest
import torch

from iceg.errors import ParameterError
from iceg.gaussians import GaussianSet
from conftest import simple_camera

from iceg.rasterize import DEFAULT_EPS2D, focal_from_fov, look_at_c2w, rasterize


def single_gaussian(scale=0.05, opacity=0.7, color=(0.2, 0.4, 0.9), pos=(0, 0, 0), dtype=torch.float64):
    return GaussianSet.from_activated([pos], [[scale] * 3], [color], [opacity], dtype=dtype)


def empty_set():
    return GaussianSet(
        positions=torch.zeros(0, 3),
        log_scales=torch.zeros(0, 3),
        rotations=torch.zeros(0, 4),
        opacity_logits=torch.zeros(0),
        color_logits=torch.zeros(0, 3),
    )


def test_empty_scene_renders_background():
    cam = simple_camera()
    out = rasterize(empty_set(), cam, 16, 16, background=(0.1, 0.2, 0.3))
    assert out.image.shape == (16, 16, 3)
    assert np.allclose(out.image.numpy(), [0.1, 0.2, 0.3])


def test_single_gaussian_matches_closed_form_alpha():
    f, size = 60.0, 17
    cam = simple_camera(eye=(3.0, 0.0, 0.0), focal=f, size=size)
    scale, opacity = 0.05, 0.7
    gs = single_gaussian(scale=scale, opacity=opacity)
    img = rasterize(gs, cam, size, size, mode="dense").image.numpy()
    alpha = (1.0 - img[:, :, 0]) / (1.0 - 0.2)  # composite over white with red channel 0.2
    # closed form: isotropic world covariance projects to (f*s/d)^2 I + eps2d I
    sigma2 = (f * scale / 3.0) ** 2 + DEFAULT_EPS2D
    for r in range(size):
        for c in range(size):
            du, dv = (c + 0.5) - size / 2, (r + 0.5) - size / 2
            want = opacity * math.exp(-0.5 * (du * du + dv * dv) / sigma2)
            assert abs(alpha[r, c] - want) < 1e-5

    peak = np.unravel_index(np.argmax(alpha), alpha.shape)
    assert peak == (size // 2, size // 2)  # principal point


def test_occlusion_front_to_back():
    cam = simple_camera(eye=(3.0, 0.0, 0.0), focal=60.0, size=17)
    gs = GaussianSet.from_activated(
        [[0.5, 0, 0], [0.0, 0, 0]],
        [[0.08] * 3] * 2,
        [[0.9, 0.1, 0.1], [0.1, 0.1, 0.9]],
        [0.995, 0.9],
        dtype=torch.float64,
    )
    img = rasterize(gs, cam, 17, 17, mode="dense").image.numpy()
    center = img[8, 8]
    assert center[0] > 0.85 and center[2] < 0.12  # near red one wins


def test_behind_camera_culled_without_error_and_zero_gradient():
    cam = simple_camera(eye=(3.0, 0.0, 0.0), focal=60.0, size=16)
    gs = GaussianSet.from_activated(
        [[0.0, 0, 0], [10.0, 0, 0]],  # second sits behind the camera
        [[0.05] * 3] * 2,
        [[0.5, 0.5, 0.5]] * 2,
        [0.7, 0.7],
        dtype=torch.float64,
    )
    g = gs.detach_clone(requires_grad=True)
    out = rasterize(g, cam, 16, 16, mode="dense")
    out.image.sum().backward()
    assert torch.all(g.positions.grad[1] == 0)
    assert torch.all(g.color_logits.grad[1] == 0)


def test_fully_outside_frustum_contributes_zero_gradient_windowed():
    cam = simple_camera(eye=(3.0, 0.0, 0.0), focal=60.0, size=16)
    gs = GaussianSet.from_activated(
        [[0.0, 0, 0], [0.0, 5.0, 0.0]],  # second projects far outside the image
        [[0.05] * 3] * 2,
        [[0.5, 0.5, 0.5]] * 2,
        [0.7, 0.7],
        dtype=torch.float64,
    )
    g = gs.detach_clone(requires_grad=True)
    out = rasterize(g, cam, 16, 16, mode="windowed")
    out.image.sum().backward()
    assert torch.all(g.color_logits.grad[1] == 0)


def test_windowed_agrees_with_dense(fixture_scene):
    _, gaussians = fixture_scene
    cam = simple_camera(eye=(4.0, 1.0, 1.5), focal=70.0, size=64)
    dense = rasterize(gaussians, cam, 64, 64, mode="dense").image
    windowed = rasterize(gaussians, cam, 64, 64, mode="windowed").image
    assert (dense - windowed).abs().max().item() < 2e-3  # 3-sigma truncation tail


def test_render_is_deterministic(fixture_scene):
    _, gaussians = fixture_scene
    cam = simple_camera(eye=(4.0, 0.5, 1.0), focal=70.0, size=32)
    a = rasterize(gaussians, cam, 32, 32).image.numpy()
    b = rasterize(gaussians, cam, 32, 32).image.numpy()
    assert np.array_equal(a, b)


def test_image_stays_in_unit_range(fixture_scene):
    _, gaussians = fixture_scene
    cam = simple_camera(eye=(4.0, -1.0, 2.0), focal=70.0, size=48)
    img = rasterize(gaussians, cam, 48, 48).image
    assert img.min().item() >= 0.0 and img.max().item() <= 1.0


def test_nonfinite_parameters_rejected_before_render():
    gs = single_gaussian()
    gs.positions[0, 0] = torch.nan
    with pytest.raises(ParameterError):
        rasterize(gs, simple_camera(), 8, 8)


def test_bad_arguments_rejected():
    gs = single_gaussian()
    with pytest.raises(ParameterError):
        rasterize(gs, simple_camera(), 0, 8)
    with pytest.raises(ParameterError):
        rasterize(gs, simple_camera(), 8, 8, mode="magic")
    with pytest.raises(ParameterError):
        rasterize(gs, simple_camera(), 8, 8, background=(1.0, 1.0))


def test_grad_available_flags():
    gs = single_gaussian()
    gs.color_logits.requires_grad_(True)
    out = rasterize(gs, simple_camera(), 8, 8)
    assert out.grad_available["color_logits"] is True
    assert out.grad_available["positions"] is False


def test_look_at_matrix_is_orthonormal():
    c2w = look_at_c2w((4.0, 2.0, 1.0))
    r = c2w[:3, :3]
    assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12


def test_focal_from_fov_matches_formula():
    assert focal_from_fov(800, 0.6911) == pytest.approx(0.5 * 800 / math.tan(0.6911 / 2))
