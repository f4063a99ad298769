"""Dense per-pixel features, region descriptors and region matching.

The matching heuristic assigns each target-view region the edit-image
region whose mean feature vector minimizes the average squared distance to
the target region's feature cells:

    dist(part, edit) = mean over the part's cells of
                       ||cell_features - edit_mean_vec||^2

where each cell counts proportionally to how many of the part's pixels
fall in its footprint. Dividing by the target part's size keeps the argmin
over differently sized edit regions well posed; dividing by the edit
region's pixel count instead is available via ``normalization="edit_count"``.

The default feature provider is a weight-free classical descriptor: per
8x8 patch, a 24-channel soft RGB histogram (8 gaussian-kernel bins per
channel) plus an 8-channel gradient-orientation histogram computed on the
HSV value channel (max of RGB) with squared-magnitude weighting. Soft
binning keeps the descriptor differentiable, which the texture loss relies
on; computing orientations on the value channel makes those channels
invariant to global hue rotations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import ceil, pi

import numpy as np
import torch

from .errors import BackendError, IntegrityError, ParameterError
from .segmentation import MaskSet, RegionMask

STRIDE = 8
RGB_BINS = 8
ORI_BINS = 8
CHANNELS = 3 * RGB_BINS + ORI_BINS

_RGB_SIGMA = 1.0 / (2 * RGB_BINS)
_ORI_KAPPA = 4.0


def classical_feature_grid(image: torch.Tensor) -> torch.Tensor:
    """(H, W, 3) image tensor in [0,1] -> (H', W', 32) feature grid.

    Fully differentiable in the input pixels. H' = ceil(H / 8).
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ParameterError(f"expected (H, W, 3) image, got {tuple(image.shape)}")
    h, w = int(image.shape[0]), int(image.shape[1])
    if h < 1 or w < 1:
        raise ParameterError("empty image")
    hp, wp = ceil(h / STRIDE), ceil(w / STRIDE)
    pad_b, pad_r = hp * STRIDE - h, wp * STRIDE - w
    if pad_b or pad_r:
        nchw = image.permute(2, 0, 1).unsqueeze(0)
        nchw = torch.nn.functional.pad(nchw, (0, pad_r, 0, pad_b), mode="replicate")
        image = nchw.squeeze(0).permute(1, 2, 0)

    dtype = image.dtype
    centers = (torch.arange(RGB_BINS, dtype=dtype) + 0.5) / RGB_BINS
    resp = torch.exp(-0.5 * ((image.unsqueeze(-1) - centers) / _RGB_SIGMA) ** 2)
    resp = resp / resp.sum(dim=-1, keepdim=True)
    hist = resp.reshape(hp, STRIDE, wp, STRIDE, 3, RGB_BINS).mean(dim=(1, 3))
    hist = hist.reshape(hp, wp, 3 * RGB_BINS)

    value = image.max(dim=-1).values
    gy = torch.cat(
        [value[1:2] - value[0:1], (value[2:] - value[:-2]) * 0.5, value[-1:] - value[-2:-1]],
        dim=0,
    )
    gx = torch.cat(
        [value[:, 1:2] - value[:, 0:1], (value[:, 2:] - value[:, :-2]) * 0.5, value[:, -1:] - value[:, -2:-1]],
        dim=1,
    )
    energy = gx * gx + gy * gy
    cos2t = (gx * gx - gy * gy) / (energy + 1e-12)
    sin2t = (2.0 * gx * gy) / (energy + 1e-12)
    phis = (torch.arange(ORI_BINS, dtype=dtype) + 0.5) * (pi / ORI_BINS)
    kernel = torch.exp(
        _ORI_KAPPA * (cos2t.unsqueeze(-1) * torch.cos(2 * phis) + sin2t.unsqueeze(-1) * torch.sin(2 * phis))
    )
    ori = (energy.unsqueeze(-1) * kernel).reshape(hp, STRIDE, wp, STRIDE, ORI_BINS).sum(dim=(1, 3))
    ori = ori / (ori.sum(dim=-1, keepdim=True) + 1e-8)

    return torch.cat([hist, ori], dim=-1)


@dataclass
class FeatureMap:
    """Dense feature grid; cell (i, j) covers image pixels [i*stride, (i+1)*stride)."""

    grid: np.ndarray  # (H', W', C) float32
    stride: int
    source_view: str = ""

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise ParameterError("feature grid must be (H', W', C)")
        if self.grid.shape[2] < 1:
            raise ParameterError("feature grid needs >= 1 channel")
        if not np.isfinite(self.grid).all():
            raise ParameterError("non-finite feature values")

    @property
    def channels(self) -> int:
        return int(self.grid.shape[2])


@dataclass
class RegionDescriptor:
    """One region's aggregate feature vector and its pixel count."""

    mask_id: int
    mean_vec: np.ndarray
    pixel_count: int

    def __post_init__(self):
        self.mean_vec = np.asarray(self.mean_vec, dtype=np.float64)
        if self.pixel_count < 1:
            raise ParameterError("descriptor pixel_count must be >= 1")
        if not np.isfinite(self.mean_vec).all():
            raise ParameterError("non-finite descriptor")


@dataclass
class MatchAssignment:
    """target mask_id -> (edit mask_id, squared-feature distance)."""

    entries: dict[int, tuple[int, float]] = field(default_factory=dict)

    def edit_id_for(self, target_mask_id: int) -> int:
        return self.entries[target_mask_id][0]

    def to_dict(self) -> dict:
        return {str(k): [int(e), float(d)] for k, (e, d) in self.entries.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "MatchAssignment":
        return cls(entries={int(k): (int(v[0]), float(v[1])) for k, v in data.items()})


class FeatureProvider:
    """Interface for dense feature extraction backends."""

    name: str = "abstract"
    channels: int = 0
    stride: int = STRIDE

    def extract(self, image: np.ndarray, view_id: str = "") -> FeatureMap:
        raise NotImplementedError


class ClassicalFeatureProvider(FeatureProvider):
    """Deterministic, weight-free fallback provider (histogram descriptor)."""

    name = "classical-32"
    channels = CHANNELS
    stride = STRIDE

    def extract(self, image: np.ndarray, view_id: str = "") -> FeatureMap:
        if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
            raise ParameterError("expected a nonempty (H, W, 3) image")
        with torch.no_grad():
            grid = classical_feature_grid(torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)))
        return FeatureMap(grid=grid.numpy().astype(np.float32), stride=self.stride, source_view=view_id)


class PrecomputedFeatureProvider(FeatureProvider):
    """Serves feature maps exported by an external extractor (e.g. a ViT).

    Looks up ``{directory}/{view_id}.icef`` written with write_feature_map.
    """

    name = "precomputed"

    def __init__(self, directory, channels: int, stride: int):
        self.directory = directory
        self.channels = channels
        self.stride = stride

    def extract(self, image: np.ndarray, view_id: str = "") -> FeatureMap:
        if not view_id:
            raise BackendError(self.name, "precomputed features require a view_id")
        path = f"{self.directory}/{view_id}.icef"
        try:
            fm = read_feature_map(path)
        except FileNotFoundError as e:
            raise BackendError(self.name, f"no feature file for view '{view_id}'") from e
        if fm.channels != self.channels:
            raise BackendError(self.name, f"channel mismatch: file has {fm.channels}, expected {self.channels}")
        fm.source_view = view_id
        return fm


class TorchModuleFeatureProvider(FeatureProvider):
    """Adapter wrapping any callable image -> (H', W', C) array (e.g. DINO/VGG).

    The callable receives a float32 (H, W, 3) array; weights are the
    caller's responsibility and never a test dependency.
    """

    def __init__(self, fn, name: str, channels: int, stride: int):
        self._fn = fn
        self.name = name
        self.channels = channels
        self.stride = stride

    def extract(self, image: np.ndarray, view_id: str = "") -> FeatureMap:
        try:
            grid = np.asarray(self._fn(np.ascontiguousarray(image, dtype=np.float32)), dtype=np.float32)
        except Exception as e:
            raise BackendError(self.name, str(e)) from e
        return FeatureMap(grid=grid, stride=self.stride, source_view=view_id)


def extract_features(image: np.ndarray, provider: FeatureProvider, view_id: str = "") -> FeatureMap:
    """Run a provider on one image, normalizing failures to BackendError."""
    if image is None or image.size == 0:
        raise ParameterError("empty image")
    try:
        fm = provider.extract(image, view_id=view_id)
    except (ParameterError, BackendError):
        raise
    except Exception as e:
        raise BackendError(provider.name, str(e)) from e
    if fm.grid.shape[0] * fm.stride < image.shape[0] or fm.grid.shape[1] * fm.stride < image.shape[1]:
        raise BackendError(provider.name, "feature grid does not cover the image")
    return fm


def cell_weights(bitmap: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    """(H', W') count of mask pixels inside each feature cell's footprint."""
    h, w = bitmap.shape
    padded = np.zeros((hp * stride, wp * stride), dtype=np.float64)
    padded[:h, :w] = bitmap
    return padded.reshape(hp, stride, wp, stride).sum(axis=(1, 3))


def describe_region(featmap: FeatureMap, mask: RegionMask) -> RegionDescriptor:
    """Pixel-weighted mean feature vector of a region."""
    area = int(mask.bitmap.sum())
    if area < 1:
        raise ParameterError("cannot describe an empty mask")
    hp, wp, _ = featmap.grid.shape
    w = cell_weights(mask.bitmap, featmap.stride, hp, wp)
    total = w.sum()
    mean = (w[..., None] * featmap.grid.astype(np.float64)).sum(axis=(0, 1)) / total
    return RegionDescriptor(mask_id=mask.mask_id, mean_vec=mean, pixel_count=area)


def match_regions(
    target_maskset: MaskSet,
    target_featmap: FeatureMap,
    edit_descriptors: list[RegionDescriptor],
    normalization: str = "target",
) -> MatchAssignment:
    """Assign every target region its closest edit region.

    Ties break toward the lower edit mask_id. ``normalization="edit_count"``
    divides by the edit region's pixel count instead of the target's.
    """
    if not edit_descriptors:
        raise ParameterError("need at least one edit descriptor")
    if normalization not in ("target", "edit_count"):
        raise ParameterError(f"unknown normalization {normalization!r}")

    descs = sorted(edit_descriptors, key=lambda d: d.mask_id)
    means = np.stack([d.mean_vec for d in descs])  # (E, C)
    counts = np.array([d.pixel_count for d in descs], dtype=np.float64)
    hp, wp, c = target_featmap.grid.shape
    if means.shape[1] != c:
        raise ParameterError(f"descriptor channels {means.shape[1]} != feature channels {c}")
    cells = target_featmap.grid.reshape(-1, c).astype(np.float64)
    sq = ((cells[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)  # (M, E)

    entries: dict[int, tuple[int, float]] = {}
    for mask in target_maskset.masks:
        w = cell_weights(mask.bitmap, target_featmap.stride, hp, wp).reshape(-1)
        sums = w @ sq
        dists = sums / w.sum() if normalization == "target" else sums / counts
        best = int(np.argmin(dists))
        entries[mask.mask_id] = (descs[best].mask_id, float(dists[best]))
    return MatchAssignment(entries=entries)


_ICEF_MAGIC = b"ICEF"
_ICEF_VERSION = 1


def write_feature_map(path, featmap: FeatureMap) -> None:
    """Binary feature-map file: magic, version, H', W', C, stride, f32 data."""
    hp, wp, c = featmap.grid.shape
    header = _ICEF_MAGIC + struct.pack("<IIIII", _ICEF_VERSION, hp, wp, c, featmap.stride)
    data = np.ascontiguousarray(featmap.grid, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(data)


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 24 or blob[:4] != _ICEF_MAGIC:
        raise IntegrityError(f"{path}: not a feature-map file")
    version, hp, wp, c, stride = struct.unpack("<IIIII", blob[4:24])
    if version != _ICEF_VERSION:
        raise IntegrityError(f"{path}: unsupported version {version}")
    expected = 24 + hp * wp * c * 4
    if len(blob) != expected:
        raise IntegrityError(f"{path}: truncated feature file ({len(blob)} vs {expected} bytes)")
    grid = np.frombuffer(blob[24:], dtype="<f4").reshape(hp, wp, c).copy()
    return FeatureMap(grid=grid, stride=stride)
