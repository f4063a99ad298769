"""Region color edits in HSV space.

Recoloring a region copies a target hue/saturation onto its pixels while
leaving the value channel -- the grayscale carrying the texture -- alone.
Brightening/darkening shifts the value channel by a constant. Region color
summaries use a saturation-weighted circular mean for hue so near-gray
pixels don't pollute the direction and the 0/360 wrap is handled.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .errors import ParameterError

GRAY_SATURATION_EPS = 1e-6


class HsvSummary(NamedTuple):
    hue: float  # degrees in [0, 360)
    sat: float
    val: float
    hue_degenerate: bool  # True when the region is effectively gray


def _check_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ParameterError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    return mask


def region_mean_hsv(image: np.ndarray, mask: np.ndarray) -> HsvSummary:
    """Mean HSV of the masked pixels; hue is a saturation-weighted circular mean."""
    mask = _check_mask(image, mask)
    if not mask.any():
        raise ParameterError("region is empty")
    hsv = rgb_to_hsv(image[mask].astype(np.float64))
    hue = hsv[:, 0] * (2.0 * np.pi)
    sat = hsv[:, 1]
    val = hsv[:, 2]
    if sat.max() < GRAY_SATURATION_EPS:
        return HsvSummary(hue=0.0, sat=float(sat.mean()), val=float(val.mean()), hue_degenerate=True)
    vx = float((sat * np.cos(hue)).sum())
    vy = float((sat * np.sin(hue)).sum())
    mean_hue = float(np.degrees(np.arctan2(vy, vx))) % 360.0
    return HsvSummary(hue=mean_hue, sat=float(sat.mean()), val=float(val.mean()), hue_degenerate=False)


def apply_color_to_region(image: np.ndarray, mask: np.ndarray, hue: float, sat: float) -> np.ndarray:
    """Set H and S of the masked pixels, preserving V; unmasked pixels untouched."""
    if not 0.0 <= hue < 360.0:
        raise ParameterError("hue must be in [0, 360)")
    if not 0.0 <= sat <= 1.0:
        raise ParameterError("saturation must be in [0, 1]")
    mask = _check_mask(image, mask)
    out = image.copy()
    if not mask.any():
        return out
    hsv = rgb_to_hsv(image[mask])
    hsv[:, 0] = hue / 360.0
    hsv[:, 1] = sat
    out[mask] = hsv_to_rgb(hsv)
    return out


def shift_value(image: np.ndarray, mask: np.ndarray, delta: float) -> np.ndarray:
    """V <- clamp(V + delta, 0, 1) on the masked pixels; H and S kept where defined."""
    if not -1.0 <= delta <= 1.0:
        raise ParameterError("value shift must be in [-1, 1]")
    mask = _check_mask(image, mask)
    out = image.copy()
    if delta == 0.0 or not mask.any():
        return out
    hsv = rgb_to_hsv(image[mask])
    hsv[:, 2] = np.clip(hsv[:, 2] + delta, 0.0, 1.0)
    out[mask] = hsv_to_rgb(hsv)
    return out


def circular_hue_difference(a_deg: float, b_deg: float) -> float:
    """Absolute hue difference in degrees, wrap-aware, in [0, 180]."""
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)
