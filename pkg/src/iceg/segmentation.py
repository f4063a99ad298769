"""Per-view region masks: pluggable segmenter backends plus consolidation.

Backends return raw masks that may overlap and may not cover the image.
``consolidate_masks`` turns them into a disjoint cover under a mask budget
N: the N-1 largest raw masks are kept (ties to the lower raw index),
contested pixels go to the larger mask, and everything left over -- smaller
masks and uncovered pixels -- becomes the Nth mask.

The fallback backend quantizes colors with seeded k-means and splits the
clusters into connected components. It is deterministic and weight-free;
SAM is exposed as an adapter and is never required by the test path.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    BackendError,
    DegenerateSegmentationError,
    IntegrityError,
    ParameterError,
)


@dataclass
class RegionMask:
    mask_id: int
    bitmap: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=bool)
        if self.bitmap.ndim != 2:
            raise ParameterError("mask bitmap must be 2-D")

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())

    def bounding_box(self) -> tuple[int, int, int, int]:
        """(row0, col0, row1, col1), half-open. Mask must be nonempty."""
        rows = np.flatnonzero(self.bitmap.any(axis=1))
        cols = np.flatnonzero(self.bitmap.any(axis=0))
        if rows.size == 0:
            raise ParameterError("empty mask has no bounding box")
        return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


@dataclass
class MaskSet:
    """Disjoint, covering region masks for one view, largest first."""

    view_id: str
    masks: list[RegionMask] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.masks[0].bitmap.shape)

    def mask_ids(self) -> list[int]:
        return [m.mask_id for m in self.masks]

    def get(self, mask_id: int) -> RegionMask:
        for m in self.masks:
            if m.mask_id == mask_id:
                return m
        raise ParameterError(f"no mask with id {mask_id}")

    def label_map(self) -> np.ndarray:
        """(H, W) uint8 array with pixel value = mask_id."""
        if len(self.masks) > 255:
            raise ParameterError("label map supports at most 255 masks")
        out = np.zeros(self.shape, dtype=np.uint8)
        for m in self.masks:
            out[m.bitmap] = m.mask_id
        return out

    def validate(self) -> None:
        """Check the partition invariants (disjoint cover, descending area)."""
        if not self.masks:
            raise ParameterError("mask set is empty")
        counts = np.zeros(self.shape, dtype=np.int32)
        for m in self.masks:
            counts += m.bitmap
        if (counts != 1).any():
            raise ParameterError("masks are not a disjoint cover of the image")
        areas = [m.area for m in self.masks]
        if any(a < b for a, b in zip(areas, areas[1:])):
            raise ParameterError("masks not ordered by descending area")


class SegmenterBackend:
    """Interface for raw segmentation backends.

    ``exclusive`` declares that one instance must not be shared across
    concurrent calls; the fallback backend is stateless and shareable.
    """

    name: str = "abstract"
    exclusive: bool = False

    def segment(self, image: np.ndarray, prompt_grid: np.ndarray | None = None) -> list[RegionMask]:
        raise NotImplementedError


class ColorKMeansBackend(SegmenterBackend):
    """Fallback segmenter: seeded k-means color quantization + connected components."""

    name = "color-kmeans"
    exclusive = False

    def __init__(self, k: int = 8, seed: int = 0):
        self.k = k
        self.seed = seed

    def segment(self, image: np.ndarray, prompt_grid: np.ndarray | None = None) -> list[RegionMask]:
        from sklearn.cluster import KMeans

        h, w = image.shape[:2]
        pixels = image.reshape(-1, 3).astype(np.float64)
        k = min(self.k, pixels.shape[0])
        if k == 1:
            labels = np.zeros(h * w, dtype=np.int32)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # fewer distinct colors than clusters is fine
                km = KMeans(n_clusters=k, n_init=1, random_state=self.seed)
                labels = km.fit_predict(pixels)
        label_img = labels.reshape(h, w)

        masks: list[RegionMask] = []
        for cluster in range(k):
            cluster_mask = label_img == cluster
            if not cluster_mask.any():
                continue
            comps, n_comps = ndimage.label(cluster_mask)
            for ci in range(1, n_comps + 1):
                masks.append(RegionMask(mask_id=len(masks), bitmap=comps == ci))
        return masks


class SamBackend(SegmenterBackend):
    """Adapter for a Segment-Anything-style automatic mask generator.

    ``generator`` must expose ``generate(image_uint8) -> [{"segmentation": bool array}]``
    (the SAM AutomaticMaskGenerator contract). Weights and the model itself
    are runtime configuration; nothing in this package depends on them.
    """

    name = "sam"
    exclusive = True

    def __init__(self, generator):
        if generator is None:
            raise BackendError(self.name, "no mask generator supplied")
        self._generator = generator

    def segment(self, image: np.ndarray, prompt_grid: np.ndarray | None = None) -> list[RegionMask]:
        img8 = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        try:
            records = self._generator.generate(img8)
        except Exception as e:
            raise BackendError(self.name, str(e)) from e
        return [RegionMask(mask_id=i, bitmap=np.asarray(r["segmentation"], dtype=bool)) for i, r in enumerate(records)]


def prompt_point_grid(height: int, width: int, grid_side: int) -> np.ndarray:
    """(grid_side^2, 2) array of (row, col) prompt points, cell centers."""
    rows = (np.arange(grid_side) + 0.5) * height / grid_side
    cols = (np.arange(grid_side) + 0.5) * width / grid_side
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.reshape(-1), cc.reshape(-1)], axis=1)


def segment_view(image: np.ndarray, backend: SegmenterBackend, grid_side: int = 32) -> list[RegionMask]:
    """Run a backend on one view, returning raw (possibly overlapping) masks."""
    if grid_side < 1:
        raise ParameterError("grid_side must be >= 1")
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ParameterError("expected a nonempty (H, W, 3) image")
    grid = prompt_point_grid(image.shape[0], image.shape[1], grid_side)
    try:
        raw = backend.segment(image, prompt_grid=grid)
    except (BackendError, ParameterError):
        raise
    except Exception as e:
        raise BackendError(backend.name, str(e)) from e
    if not raw:
        raise DegenerateSegmentationError(f"backend '{backend.name}' returned zero masks")
    for m in raw:
        if m.bitmap.shape != image.shape[:2]:
            raise BackendError(backend.name, "mask resolution does not match the image")
    return raw


def consolidate_masks(
    raw_masks: list[RegionMask],
    n_budget: int,
    image_size: tuple[int, int],
    view_id: str = "",
) -> MaskSet:
    """Reduce raw masks to a disjoint cover with at most ``n_budget`` masks.

    Keeps the n_budget-1 largest raw masks (ties to the lower raw index);
    contested pixels go to the larger mask; all remaining pixels form the
    final mask. Output masks are relabeled 0.. in descending area order.
    """
    if n_budget < 1:
        raise ParameterError("mask budget must be >= 1")
    h, w = image_size
    areas = [m.area for m in raw_masks]
    order = sorted(range(len(raw_masks)), key=lambda i: (-areas[i], i))
    kept = order[: max(0, n_budget - 1)]

    # Paint lowest-priority first so higher priority overwrites contested pixels.
    label = np.full((h, w), -1, dtype=np.int32)
    for idx in sorted(kept, key=lambda i: (areas[i], -i)):
        label[raw_masks[idx].bitmap] = idx

    bitmaps = []
    for idx in kept:
        bitmap = label == idx
        if bitmap.any():
            bitmaps.append(bitmap)
    residue = label == -1
    if residue.any():
        bitmaps.append(residue)

    bitmaps.sort(key=lambda b: -int(b.sum()))  # stable: kept-before-residue on ties
    masks = [RegionMask(mask_id=i, bitmap=b) for i, b in enumerate(bitmaps)]
    maskset = MaskSet(view_id=view_id, masks=masks)
    maskset.validate()
    return maskset


def segment_and_consolidate(
    image: np.ndarray,
    backend: SegmenterBackend,
    n_budget: int,
    grid_side: int = 32,
    view_id: str = "",
) -> MaskSet:
    raw = segment_view(image, backend, grid_side=grid_side)
    return consolidate_masks(raw, n_budget, image.shape[:2], view_id=view_id)


# ---------------------------------------------------------------------------
# Serialization: JSON header + run-length-encoded bitmaps in a sidecar binary,
# plus a label-map PNG export for the UI.
# ---------------------------------------------------------------------------

_RLE_MAGIC = b"ICEM"


def _encode_rle(bitmap: np.ndarray) -> np.ndarray:
    """Run lengths of the flattened bitmap, alternating off/on, off first."""
    flat = bitmap.reshape(-1)
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:  # must start with an off-run
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def _decode_rle(runs: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    pos = 0
    on = False
    for run in runs:
        run = int(run)
        if on:
            flat[pos : pos + run] = True
        pos += run
        on = not on
    if pos != flat.size:
        raise IntegrityError("RLE stream does not match the stated shape")
    return flat.reshape(shape)


def save_maskset(maskset: MaskSet, json_path) -> None:
    json_path = str(json_path)
    rle_path = json_path[: -len(".json")] + ".rle" if json_path.endswith(".json") else json_path + ".rle"
    header = {
        "view_id": maskset.view_id,
        "shape": list(maskset.shape),
        "count": len(maskset.masks),
        "mask_ids": maskset.mask_ids(),
        "areas": [m.area for m in maskset.masks],
        "rle_file": rle_path.rsplit("/", 1)[-1],
    }
    with open(json_path, "w") as f:
        json.dump(header, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(rle_path, "wb") as f:
        f.write(_RLE_MAGIC)
        for m in maskset.masks:
            runs = _encode_rle(m.bitmap)
            f.write(struct.pack("<I", runs.size))
            f.write(runs.astype("<u4").tobytes())


def load_maskset(json_path) -> MaskSet:
    json_path = str(json_path)
    with open(json_path) as f:
        header = json.load(f)
    shape = tuple(header["shape"])
    rle_path = json_path.rsplit("/", 1)[0] + "/" + header["rle_file"] if "/" in json_path else header["rle_file"]
    with open(rle_path, "rb") as f:
        blob = f.read()
    if blob[:4] != _RLE_MAGIC:
        raise IntegrityError(f"{rle_path}: not a mask sidecar file")
    offset = 4
    masks = []
    for mask_id in header["mask_ids"]:
        if offset + 4 > len(blob):
            raise IntegrityError(f"{rle_path}: truncated sidecar")
        (n_runs,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        end = offset + 4 * n_runs
        if end > len(blob):
            raise IntegrityError(f"{rle_path}: truncated sidecar")
        runs = np.frombuffer(blob[offset:end], dtype="<u4")
        offset = end
        masks.append(RegionMask(mask_id=int(mask_id), bitmap=_decode_rle(runs, shape)))
    return MaskSet(view_id=header["view_id"], masks=masks)


def save_label_map_png(maskset: MaskSet, path) -> None:
    Image.fromarray(maskset.label_map(), mode="L").save(path)
