"""Loss suite for splat finetuning.

* ``loss_gs``     interpolated L1 / structural-dissimilarity photometric loss
                  (the 1 - SSIM convention; a similarity is not a loss).
* ``loss_nnfm``   mean over rendered feature vectors of the cosine distance
                  to the nearest style feature vector.
* ``loss_texture``  NNFM plus a photometric regularizer against the edited
                  target view.

All entry points accept torch tensors and stay differentiable; numpy inputs
are converted on the way in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import exp

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ParameterError
from .features import STRIDE as FEATURE_STRIDE
from .features import classical_feature_grid

DEFAULT_L1_WEIGHT = 0.8  # interpolation weight on the L1 term
DEFAULT_GS_REG_WEIGHT = 0.5  # photometric regularizer weight in the texture loss


@dataclass
class LossConfig:
    """Loss hyperparameters for the two finetuning stages."""

    l1_weight: float = DEFAULT_L1_WEIGHT
    gs_reg_weight: float = DEFAULT_GS_REG_WEIGHT
    nnfm_layers: tuple = ()
    ssim_window: int = 11
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4

    def __post_init__(self):
        if not 0.0 <= self.l1_weight <= 1.0:
            raise ParameterError("l1_weight must be in [0, 1]")
        if self.gs_reg_weight < 0.0:
            raise ParameterError("gs_reg_weight must be >= 0")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ParameterError("ssim_window must be a positive odd integer")


def _as_image_tensor(img) -> torch.Tensor:
    t = torch.as_tensor(img) if not isinstance(img, torch.Tensor) else img
    if t.ndim == 2:
        t = t.unsqueeze(-1)
    if t.ndim != 3:
        raise ParameterError(f"expected (H, W) or (H, W, C) image, got shape {tuple(t.shape)}")
    return t


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    xs = [exp(-((i - size // 2) ** 2) / (2.0 * sigma**2)) for i in range(size)]
    g = torch.tensor(xs, dtype=dtype, device=device)
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(img_a, img_b, window_size: int = 11, c1: float = 1e-4, c2: float = 9e-4) -> torch.Tensor:
    """Mean SSIM over gaussian-windowed local statistics, per channel then averaged."""
    a = _as_image_tensor(img_a)
    b = _as_image_tensor(img_b)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    dtype = a.dtype if a.is_floating_point() else torch.float32
    a = a.to(dtype)
    b = b.to(dtype)

    channels = a.shape[2]
    win = _gaussian_window(window_size, 1.5, dtype, a.device)
    kernel = win.expand(channels, 1, window_size, window_size).contiguous()
    pad = window_size // 2

    x = a.permute(2, 0, 1).unsqueeze(0)
    y = b.permute(2, 0, 1).unsqueeze(0)
    mu_x = F.conv2d(x, kernel, padding=pad, groups=channels)
    mu_y = F.conv2d(y, kernel, padding=pad, groups=channels)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = F.conv2d(x * x, kernel, padding=pad, groups=channels) - mu_xx
    sigma_yy = F.conv2d(y * y, kernel, padding=pad, groups=channels) - mu_yy
    sigma_xy = F.conv2d(x * y, kernel, padding=pad, groups=channels) - mu_xy

    ssim_map = ((2 * mu_xy + c1) * (2 * sigma_xy + c2)) / ((mu_xx + mu_yy + c1) * (sigma_xx + sigma_yy + c2))
    return ssim_map.mean()


def loss_gs(rendered, target, l1_weight: float = DEFAULT_L1_WEIGHT, config: LossConfig | None = None) -> torch.Tensor:
    """lambda * L1 + (1 - lambda) * (1 - SSIM). Zero iff the images are identical."""
    if config is not None:
        l1_weight = config.l1_weight
        window, c1, c2 = config.ssim_window, config.ssim_c1, config.ssim_c2
    else:
        window, c1, c2 = 11, 1e-4, 9e-4
    if not 0.0 <= l1_weight <= 1.0:
        raise ParameterError("l1_weight must be in [0, 1]")
    a = _as_image_tensor(rendered)
    b = _as_image_tensor(target)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    b = b.to(a.dtype) if a.is_floating_point() else b
    l1 = (a - b).abs().mean()
    if l1_weight == 1.0:
        return l1
    return l1_weight * l1 + (1.0 - l1_weight) * (1.0 - ssim(a, b, window, c1, c2))


def _as_feature_rows(feat) -> torch.Tensor:
    t = torch.as_tensor(feat) if not isinstance(feat, torch.Tensor) else feat
    if t.ndim == 3:
        t = t.reshape(-1, t.shape[-1])
    if t.ndim != 2 or t.shape[0] == 0:
        raise ParameterError("feature input must be a nonempty (M, C) or (H', W', C) array")
    return t


def loss_nnfm(rendered_feat, style_feat) -> torch.Tensor:
    """Mean over rendered vectors of the min cosine distance to any style vector.

    Zero-norm vectors normalize to zero and therefore sit at distance 1
    from everything.
    """
    f = _as_feature_rows(rendered_feat)
    g = _as_feature_rows(style_feat)
    if f.shape[1] != g.shape[1]:
        raise ParameterError(f"channel mismatch: {f.shape[1]} vs {g.shape[1]}")
    g = g.to(f.dtype)
    f_hat = f / f.norm(dim=1, keepdim=True).clamp_min(1e-12)
    g_hat = g / g.norm(dim=1, keepdim=True).clamp_min(1e-12)
    cos_dist = 1.0 - f_hat @ g_hat.T
    return cos_dist.min(dim=1).values.mean()


def masked_nnfm(feats: torch.Tensor, style_feat: torch.Tensor, mask: np.ndarray, stride: int = FEATURE_STRIDE) -> torch.Tensor:
    """NNFM over a region's feature cells, each weighted by its pixel overlap.

    Weighting by footprint overlap keeps half-covered boundary cells (whose
    patches mix region content with surroundings) from dominating small
    regions, mirroring the pixel-overlap weighting used for region
    descriptors.
    """
    from .features import cell_weights

    hp, wp, c = feats.shape
    w = cell_weights(np.asarray(mask, dtype=bool), stride, hp, wp).reshape(-1)
    idx = np.flatnonzero(w > 0)
    if idx.size == 0:
        raise ParameterError("mask selects no feature cells")
    rows = feats.reshape(-1, c)[torch.from_numpy(idx)]
    g_hat = style_feat.reshape(-1, style_feat.shape[-1]).to(rows.dtype)
    g_hat = g_hat / g_hat.norm(dim=1, keepdim=True).clamp_min(1e-12)
    f_hat = rows / rows.norm(dim=1, keepdim=True).clamp_min(1e-12)
    dists = (1.0 - f_hat @ g_hat.T).min(dim=1).values
    weights = torch.from_numpy(w[idx]).to(dists.dtype)
    return (dists * weights).sum() / weights.sum()


def loss_texture(
    rendered,
    target,
    style_image,
    config: LossConfig | None = None,
    *,
    feature_fn=classical_feature_grid,
    style_feat: torch.Tensor | None = None,
    rendered_mask: np.ndarray | None = None,
) -> torch.Tensor:
    """NNFM between rendered and style features plus the photometric regularizer.

    ``rendered_mask`` optionally restricts the rendered feature cells to
    those overlapping an edited region (the training loops use this so the
    style pull stays local); the default compares every rendered cell.
    ``style_feat`` short-circuits re-extracting style features each call.
    """
    cfg = config or LossConfig()
    a = _as_image_tensor(rendered)
    feats = feature_fn(a)
    if style_feat is None:
        style_img = _as_image_tensor(style_image)
        with torch.no_grad():
            style_feat = feature_fn(style_img.to(a.dtype))
    if rendered_mask is not None:
        nnfm = masked_nnfm(feats, style_feat, rendered_mask)
    else:
        nnfm = loss_nnfm(feats.reshape(-1, feats.shape[-1]), style_feat)
    if cfg.gs_reg_weight == 0.0:
        return nnfm
    return nnfm + cfg.gs_reg_weight * loss_gs(rendered, target, config=cfg)


@dataclass
class RegionStyleTarget:
    """One textured region inside a view: its pixel mask and style features."""

    mask: np.ndarray
    style_feat: torch.Tensor


def loss_texture_multi_region(
    rendered,
    target,
    regions: list[RegionStyleTarget],
    config: LossConfig,
    *,
    feature_fn=classical_feature_grid,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Texture loss over several independently styled regions of one view.

    Returns (total loss, nnfm-only component). Each region's NNFM runs over
    its own overlap-weighted cells against its own style features; regions
    combine weighted by area so the result is the pixel-weighted mean over
    all styled cells.
    """
    a = _as_image_tensor(rendered)
    feats = feature_fn(a)
    terms = []
    weights = []
    for region in regions:
        area = float(np.asarray(region.mask, dtype=bool).sum())
        if area == 0:
            continue
        terms.append(masked_nnfm(feats, region.style_feat, region.mask))
        weights.append(area)
    if not terms:
        raise ParameterError("no styled region overlaps any feature cell")
    wsum = sum(weights)
    nnfm = sum(t * (w / wsum) for t, w in zip(terms, weights))
    total = nnfm + config.gs_reg_weight * loss_gs(rendered, target, config=config)
    return total, nnfm
