"""Posed multi-view dataset loading and deterministic edit-view sampling.

The canonical ingest format is the NeRF-synthetic transforms manifest
(``camera_angle_x`` plus ``frames[].file_path`` / ``transform_matrix``).
A flat-directory fallback (``poses.json`` with an explicit pixel focal) is
accepted for toy scenes. Images decode to float32 in [0, 1]; sRGB values
are taken as-is, and RGBA sources are composited over white.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError, ParameterError, SceneFormatError, ViewLoadError

MANIFEST_NAMES = ("transforms.json", "transforms_train.json", "poses.json")


@dataclass
class ViewImage:
    view_id: str
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ParameterError("view pixels must be (H, W, 3)")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ParameterError("view must be at least 1x1")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ParameterError("view pixels must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class CameraPose:
    c2w: np.ndarray  # (4, 4) camera-to-world, OpenGL convention
    focal: float
    principal_point: tuple[float, float]

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ParameterError("c2w must be 4x4")
        r = self.c2w[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-5:
            raise ParameterError("c2w rotation block is not orthonormal")
        if self.focal <= 0:
            raise ParameterError("focal must be positive")


@dataclass
class SceneDataset:
    name: str
    views: list[tuple[ViewImage, CameraPose]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.views) < 2:
            raise DatasetError("a dataset needs at least 2 views")
        shapes = {v.pixels.shape for v, _ in self.views}
        if len(shapes) != 1:
            raise DatasetError(f"inconsistent view resolutions: {sorted(shapes)}")
        ids = [v.view_id for v, _ in self.views]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate view ids")

    def __len__(self) -> int:
        return len(self.views)

    @property
    def resolution(self) -> tuple[int, int]:
        v = self.views[0][0]
        return v.height, v.width

    def view_ids(self) -> list[str]:
        return [v.view_id for v, _ in self.views]

    def get(self, view_id: str) -> tuple[ViewImage, CameraPose]:
        for v, c in self.views:
            if v.view_id == view_id:
                return v, c
        raise ParameterError(f"no view '{view_id}' in dataset '{self.name}'")


def _decode_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("RGBA", "LA", "P"):
                rgba = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
                alpha = rgba[:, :, 3:4]
                rgb = rgba[:, :, :3] * alpha + (1.0 - alpha)  # composite over white
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as e:
        raise ViewLoadError(path, str(e)) from e
    return rgb.astype(np.float32)


def _find_manifest(path: Path) -> Path:
    if path.is_file():
        return path
    for name in MANIFEST_NAMES:
        candidate = path / name
        if candidate.exists():
            return candidate
    raise SceneFormatError(f"no dataset manifest ({', '.join(MANIFEST_NAMES)}) under {path}")


def load_dataset(path, name: str | None = None) -> SceneDataset:
    """Load a posed dataset from a manifest file or its containing directory."""
    manifest = _find_manifest(Path(path))
    root = manifest.parent
    try:
        spec = json.loads(manifest.read_text())
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{manifest}: invalid JSON ({e})") from e

    frames = spec.get("frames")
    if frames is None:
        raise SceneFormatError(f"{manifest}: missing 'frames' list")
    if not frames:
        raise DatasetError(f"{manifest}: empty frame list")

    views = []
    for i, frame in enumerate(frames):
        rel = frame.get("file_path") or frame.get("file")
        matrix = frame.get("transform_matrix") or frame.get("c2w")
        if rel is None or matrix is None:
            raise SceneFormatError(f"{manifest}: frame {i} is missing file_path or transform_matrix")
        img_path = root / rel
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise ViewLoadError(img_path, "file does not exist")
        pixels = _decode_image(img_path)
        h, w = pixels.shape[:2]

        if "camera_angle_x" in spec:
            focal = 0.5 * w / math.tan(0.5 * float(spec["camera_angle_x"]))
        elif "focal_px" in spec:
            focal = float(spec["focal_px"])
        elif "fl_x" in spec:
            focal = float(spec["fl_x"])
        else:
            raise SceneFormatError(f"{manifest}: no camera_angle_x or focal entry")

        view_id = Path(rel).stem
        views.append(
            (
                ViewImage(view_id=view_id, pixels=pixels),
                CameraPose(c2w=np.asarray(matrix, dtype=np.float64), focal=focal, principal_point=(w / 2.0, h / 2.0)),
            )
        )
    return SceneDataset(name=name or root.name, views=views)


def save_dataset(dataset: SceneDataset, out_dir, image_subdir: str = "views") -> Path:
    """Write views as PNGs plus a transforms manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / image_subdir).mkdir(parents=True, exist_ok=True)
    h, w = dataset.resolution
    focal = dataset.views[0][1].focal
    frames = []
    for view, pose in dataset.views:
        rel = f"./{image_subdir}/{view.view_id}"
        img8 = (np.clip(view.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(img8).save(out_dir / (rel + ".png"))
        frames.append({"file_path": rel, "transform_matrix": pose.c2w.tolist()})
    manifest = {
        "camera_angle_x": 2.0 * math.atan(0.5 * w / focal),
        "frames": frames,
    }
    manifest_path = out_dir / "transforms.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def sample_edit_views(dataset: SceneDataset, fraction: float, seed: int) -> list[str]:
    """ceil(fraction * |views|) distinct view ids, uniform without replacement.

    Pure in (dataset, fraction, seed); results are returned in dataset order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError("fraction must be in (0, 1]")
    n = len(dataset)
    k = math.ceil(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    ids = dataset.view_ids()
    return [ids[i] for i in sorted(int(c) for c in chosen)]
