"""Protocol helpers shared by the pipeline tests and the acceptance suite."""

import numpy as np
import torch

from iceg.features import classical_feature_grid, describe_region, extract_features, match_regions
from iceg.fixture import FIXTURE_MAX_MASKS, classify_blob_regions
from iceg.losses import masked_nnfm
from iceg.pipeline import make_feature_provider, make_segmenter
from iceg.rasterize import rasterize
from iceg.segmentation import segment_and_consolidate
from iceg.style2d import RegionStyle, StyleSpec, build_edit_plan


def build_recolor_plan(dataset, config, edit_view: str, hue: float = 280.0):
    """Plan that recolors the red blob (body + blend ring) to ``hue``.

    Returns (plan, red_ids, body_id).
    """
    from iceg.color_ops import region_mean_hsv

    backend = make_segmenter(config)
    provider = make_feature_provider(config)
    view, _ = dataset.get(edit_view)
    maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, view_id="edit")
    groups = classify_blob_regions(view.pixels, maskset)
    assert groups["red_body"], "fixture edit view lost its red body region"
    regions = {}
    for mid in groups["red"]:
        sat = min(0.8, region_mean_hsv(view.pixels, maskset.get(mid).bitmap).sat)
        regions[mid] = RegionStyle(mode="color", color_hs=(hue, sat))
    style = StyleSpec(regions=regions)
    plan = build_edit_plan(
        view.pixels, style, backend=backend, provider=provider,
        max_masks=config.max_masks, grid_side=config.grid_side,
        canvas_size=config.canvas_size, seed=config.seed,
    )
    return plan, set(groups["red"]), groups["red_body"][0]


def build_texture_plan(dataset, config, edit_view: str, canvas):
    """Plan that pastes ``canvas`` onto the red blob body. Returns (plan, body_id)."""
    backend = make_segmenter(config)
    provider = make_feature_provider(config)
    view, _ = dataset.get(edit_view)
    maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, view_id="edit")
    groups = classify_blob_regions(view.pixels, maskset)
    body = groups["red_body"][0]
    style = StyleSpec(regions={body: RegionStyle(mode="texture")})
    plan = build_edit_plan(
        view.pixels, style, backend=backend, provider=provider,
        max_masks=config.max_masks, grid_side=config.grid_side,
        canvas_size=config.canvas_size, seed=config.seed,
        canvases={body: canvas},
    )
    return plan, body


def view_assignment(dataset, config, plan, view_id):
    """(maskset, assignment) for one view under the plan's descriptors."""
    backend = make_segmenter(config)
    provider = make_feature_provider(config)
    view, _ = dataset.get(view_id)
    maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, view_id=view_id)
    featmap = extract_features(view.pixels, provider, view_id=view_id)
    assignment = match_regions(maskset, featmap, plan.edit_descriptors, normalization=config.match_normalization)
    return maskset, assignment


def matched_union(maskset, assignment, edit_ids) -> np.ndarray:
    """Union bitmap of target masks assigned to any of ``edit_ids``."""
    if isinstance(edit_ids, int):
        edit_ids = {edit_ids}
    union = np.zeros(maskset.shape, dtype=bool)
    for mask in maskset.masks:
        if assignment.edit_id_for(mask.mask_id) in edit_ids:
            union |= mask.bitmap
    return union


def render_np(gaussians, camera, size=64, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    with torch.no_grad():
        return rasterize(gaussians, camera, size, size, background=background).image.numpy()


def masked_region_nnfm(gaussians, camera, mask, style_feat, size=64, background=(1.0, 1.0, 1.0)) -> float:
    """Overlap-weighted NNFM of the rendered region against style features."""
    with torch.no_grad():
        img = rasterize(gaussians, camera, size, size, background=background).image
        feats = classical_feature_grid(img)
        return float(masked_nnfm(feats, style_feat, mask))


def unmasked_psnr(original: np.ndarray, edited: np.ndarray, excluded_mask: np.ndarray) -> float:
    keep = ~excluded_mask
    mse = float(((original[keep] - edited[keep]) ** 2).mean())
    return 10.0 * np.log10(1.0 / max(mse, 1e-12))


def red_family_pixels(image: np.ndarray) -> np.ndarray:
    """Pixels belonging to the red blob in an original render (body + blends).

    Independent of segmentation/matching: classified by hue alone, dilated
    one pixel to absorb anti-aliased silhouettes.
    """
    from matplotlib.colors import rgb_to_hsv
    from scipy import ndimage

    hsv = rgb_to_hsv(image.astype(np.float64))
    hue = hsv[..., 0] * 360.0
    family = ((hue < 40.0) | (hue > 320.0)) & (hsv[..., 1] > 0.15) & (hsv[..., 2] > 0.02)
    return ndimage.binary_dilation(family, iterations=1)
