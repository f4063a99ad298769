"""Desk-scale synthetic scene used by the demo project and the test suite.

Three saturated color blobs (~170 gaussians each) on a white background,
observed by an orbit of cameras. Small enough to train in seconds on a
laptop CPU yet structured enough that segmentation, matching and the two
finetuning stages all have real work to do.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch

from .dataset import CameraPose, SceneDataset, ViewImage, save_dataset
from .gaussians import GaussianSet
from .project import Project, ProjectConfig
from .rasterize import focal_from_fov, look_at_c2w, rasterize

BLOB_COLORS = ((0.83, 0.12, 0.12), (0.12, 0.78, 0.15), (0.15, 0.25, 0.85))
# The red blob sits at the orbit center so its apparent size stays constant
# across views (pasted textures then agree in scale view to view); the other
# blobs hang lower so they never occlude it.
BLOB_CENTERS = ((0.0, 0.0, 0.35), (0.95, 0.0, -0.55), (-0.95, 0.0, -0.55))
BLOB_SPREADS = (0.21, 0.16, 0.16)
# Black background: blob edges blend toward black, which preserves their hue
# (a color scaled toward zero keeps H and S), so region edits supervise edge
# pixels consistently no matter how the segmenter groups them.
FIXTURE_BACKGROUND = (0.0, 0.0, 0.0)


def make_blob_scene(n_gaussians: int = 510, seed: int = 0) -> GaussianSet:
    # Opacities below ~0.95 keep inner-shell gaussians visible enough to
    # receive gradients from a 20% view sample; tight scales keep the white
    # blend ring around each blob thin but still wide enough to segment.
    rng = np.random.default_rng(seed)
    per = n_gaussians // len(BLOB_CENTERS)
    counts = [per] * len(BLOB_CENTERS)
    counts[-1] += n_gaussians - per * len(BLOB_CENTERS)

    positions, colors = [], []
    for center, color, count, spread in zip(BLOB_CENTERS, BLOB_COLORS, counts, BLOB_SPREADS):
        positions.append(rng.normal(0.0, spread, (count, 3)) * [1.0, 1.0, 0.7] + center)
        colors.append(np.clip(color + rng.normal(0.0, 0.02, (count, 3)), 0.03, 0.97))
    positions = np.concatenate(positions)
    colors = np.concatenate(colors)
    scales = np.exp(rng.normal(math.log(0.05), 0.10, (n_gaussians, 3)))
    opacities = rng.uniform(0.85, 0.95, n_gaussians)
    rotations = rng.normal(0.0, 1.0, (n_gaussians, 4))
    return GaussianSet.from_activated(positions, scales, colors, opacities, rotations=rotations)


def blob_gaussian_ranges(n_gaussians: int = 510) -> list[range]:
    per = n_gaussians // len(BLOB_CENTERS)
    bounds = [0, per, 2 * per, n_gaussians]
    return [range(bounds[i], bounds[i + 1]) for i in range(3)]


def orbit_cameras(
    n_views: int = 30,
    *,
    radius: float = 4.0,
    height: float = 1.5,
    image_size: int = 64,
    fov_x: float = math.radians(45.0),
) -> list[CameraPose]:
    focal = focal_from_fov(image_size, fov_x)
    cameras = []
    for k in range(n_views):
        az = 2.0 * math.pi * k / n_views
        eye = (radius * math.cos(az), radius * math.sin(az), height)
        cameras.append(
            CameraPose(
                c2w=look_at_c2w(eye),
                focal=focal,
                principal_point=(image_size / 2.0, image_size / 2.0),
            )
        )
    return cameras


def render_views(
    gaussians: GaussianSet,
    cameras: list[CameraPose],
    image_size: int,
    background=FIXTURE_BACKGROUND,
) -> list[np.ndarray]:
    images = []
    with torch.no_grad():
        for cam in cameras:
            out = rasterize(gaussians, cam, image_size, image_size, background=background)
            images.append(out.image.numpy().astype(np.float32))
    return images


def make_fixture_dataset(
    *,
    n_views: int = 30,
    image_size: int = 64,
    n_gaussians: int = 510,
    seed: int = 0,
    name: str = "blobs",
) -> tuple[SceneDataset, GaussianSet]:
    gaussians = make_blob_scene(n_gaussians, seed=seed)
    cameras = orbit_cameras(n_views, image_size=image_size)
    images = render_views(gaussians, cameras, image_size)
    # quantize to 8 bits exactly as the PNG writer does, so the in-memory
    # dataset is bit-identical to its on-disk round-trip
    views = [
        (
            ViewImage(
                view_id=f"r_{i:03d}",
                pixels=np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.float32) / np.float32(255.0),
            ),
            cam,
        )
        for i, (img, cam) in enumerate(zip(images, cameras))
    ]
    return SceneDataset(name=name, views=views), gaussians


def checkerboard(size: int = 128, square: int = 8, lo: float = 0.06, hi: float = 0.94) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    board = ((rr // square + cc // square) % 2).astype(np.float32)
    tile = lo + (hi - lo) * board
    return np.repeat(tile[:, :, None], 3, axis=2).astype(np.float32)


FIXTURE_MAX_MASKS = 8  # background + three blob bodies + their blend rings


def write_fixture_project(
    root,
    *,
    n_views: int = 30,
    image_size: int = 64,
    n_gaussians: int = 510,
    seed: int = 0,
    config: ProjectConfig | None = None,
) -> Project:
    """Materialize the demo scene on disk: dataset, project.json, base checkpoint."""
    root = Path(root)
    dataset, gaussians = make_fixture_dataset(
        n_views=n_views, image_size=image_size, n_gaussians=n_gaussians, seed=seed
    )
    save_dataset(dataset, root / "dataset")
    if config is None:
        config = ProjectConfig(max_masks=FIXTURE_MAX_MASKS, background=list(FIXTURE_BACKGROUND))
    project = Project.create(root, dataset_ref="dataset", name=dataset.name, config=config)
    project.save_base_gaussians(gaussians)
    return project


def classify_blob_regions(image: np.ndarray, maskset) -> dict[str, list[int]]:
    """Group a fixture view's mask ids by blob color, plus the dominant body mask.

    Returns {"red": [...], "green": [...], "blue": [...], "red_body": [id]}
    where the per-color lists include both the saturated body and the pale
    blend ring, and ``red_body`` is the most saturated sizable red mask.
    """
    from .color_ops import region_mean_hsv

    out: dict[str, list[int]] = {"red": [], "green": [], "blue": [], "red_body": []}
    best_sat = -1.0
    for mask in maskset.masks:
        summary = region_mean_hsv(image, mask.bitmap)
        if summary.hue_degenerate or summary.sat <= 0.15:
            continue
        if summary.hue < 30 or summary.hue > 330:
            out["red"].append(mask.mask_id)
            if summary.sat > best_sat and mask.area > 50:
                out["red_body"] = [mask.mask_id]
                best_sat = summary.sat
        elif 80 <= summary.hue < 180:
            out["green"].append(mask.mask_id)
        elif 180 <= summary.hue < 300:
            out["blue"].append(mask.mask_id)
    return out


def recolor_red_blob_style(edit_image: np.ndarray, edit_maskset, hue: float = 280.0):
    """Style spec recoloring the red blob (body + ring) to ``hue``.

    Returns (style, red_ids, body_id). Each region keeps its own original
    saturation (capped at 0.8) so the pale ring stays pale.
    """
    from .color_ops import region_mean_hsv
    from .style2d import RegionStyle, StyleSpec

    groups = classify_blob_regions(edit_image, edit_maskset)
    if not groups["red_body"]:
        raise ValueError("fixture edit view has no saturated red region")
    regions = {}
    for mid in groups["red"]:
        sat = min(0.8, region_mean_hsv(edit_image, edit_maskset.get(mid).bitmap).sat)
        regions[mid] = RegionStyle(mode="color", color_hs=(hue, sat))
    return StyleSpec(regions=regions), set(groups["red"]), groups["red_body"][0]
