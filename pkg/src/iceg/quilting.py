"""Patch-based texture synthesis (quilting with minimum-error boundary cuts).

Builds a square texture tile out of patches sampled entirely inside a
region mask. Patches are placed on an overlapping grid; each new patch is
drawn (seeded) from the candidates whose overlap error is within 10% of
the best, and the overlap seam is resolved with a dynamic-programming
minimum-error cut. When the mask is too tight for the requested patch
size, the patch shrinks by halving until source windows exist.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

DEFAULT_PATCH = 32
ERROR_TOLERANCE = 0.1
MAX_CANDIDATES = 2000


def _valid_patch_positions(mask: np.ndarray, patch: int) -> np.ndarray:
    """(K, 2) top-left corners of patch x patch windows fully inside the mask."""
    h, w = mask.shape
    if patch > h or patch > w:
        return np.zeros((0, 2), dtype=np.int64)
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    sums = ii[patch:, patch:] - ii[:-patch, patch:] - ii[patch:, :-patch] + ii[:-patch, :-patch]
    rows, cols = np.nonzero(sums == patch * patch)
    return np.stack([rows, cols], axis=1)


def _min_cut_path(errors: np.ndarray) -> np.ndarray:
    """Column index of the minimum-error vertical seam per row.

    ``errors`` is (rows, cols); the returned path moves at most one column
    between consecutive rows.
    """
    rows, cols = errors.shape
    cum = errors.copy()
    for r in range(1, rows):
        prev = cum[r - 1]
        best_prev = prev.copy()
        best_prev[1:] = np.minimum(best_prev[1:], prev[:-1])
        best_prev[:-1] = np.minimum(best_prev[:-1], prev[1:])
        cum[r] += best_prev
    path = np.zeros(rows, dtype=np.int64)
    path[-1] = int(np.argmin(cum[-1]))
    for r in range(rows - 2, -1, -1):
        c = path[r + 1]
        lo, hi = max(0, c - 1), min(cols, c + 2)
        path[r] = lo + int(np.argmin(cum[r, lo:hi]))
    return path


def _overlap_errors(strips_a: np.ndarray, strip_b: np.ndarray) -> np.ndarray:
    diff = strips_a - strip_b[None, ...]
    return (diff * diff).reshape(strips_a.shape[0], -1).sum(axis=1)


def synthesize_texture(
    source: np.ndarray,
    mask: np.ndarray,
    size: int,
    *,
    patch: int = DEFAULT_PATCH,
    seed: int = 0,
    max_candidates: int = MAX_CANDIDATES,
) -> np.ndarray:
    """Quilt a (size, size, 3) texture from the masked pixels of ``source``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != source.shape[:2]:
        raise ParameterError("mask shape does not match the source image")
    area = int(mask.sum())
    if area < 1:
        raise ParameterError("mask is empty")
    rng = np.random.default_rng(seed)

    positions = _valid_patch_positions(mask, patch)
    while positions.shape[0] == 0 and patch > 1:
        patch = max(1, patch // 2)
        positions = _valid_patch_positions(mask, patch)

    if patch == 1:
        # Mask too sparse for windows: mosaic of individual masked pixels.
        pix = source[mask].reshape(-1, 3)
        idx = rng.integers(0, pix.shape[0], size * size)
        return pix[idx].reshape(size, size, 3).astype(source.dtype)

    if positions.shape[0] > max_candidates:
        keep = rng.choice(positions.shape[0], size=max_candidates, replace=False)
        positions = positions[np.sort(keep)]

    patches = np.stack(
        [source[r : r + patch, c : c + patch].astype(np.float64) for r, c in positions]
    )  # (K, p, p, 3)
    overlap = max(1, patch // 4)
    step = patch - overlap
    ext = step * int(np.ceil((size - patch) / step)) + patch if size > patch else patch
    canvas = np.zeros((ext, ext, 3), dtype=np.float64)

    left_strips = patches[:, :, :overlap, :]
    top_strips = patches[:, :overlap, :, :]

    for by in range(0, ext - patch + 1, step):
        for bx in range(0, ext - patch + 1, step):
            if by == 0 and bx == 0:
                choice = int(rng.integers(0, patches.shape[0]))
                canvas[:patch, :patch] = patches[choice]
                continue
            err = np.zeros(patches.shape[0], dtype=np.float64)
            if bx > 0:
                existing = canvas[by : by + patch, bx : bx + overlap]
                err += _overlap_errors(left_strips, existing)
            if by > 0:
                existing = canvas[by : by + overlap, bx : bx + patch]
                err += _overlap_errors(top_strips, existing)
            cutoff = err.min() * (1.0 + ERROR_TOLERANCE) + 1e-12
            pool = np.flatnonzero(err <= cutoff)
            choice = int(pool[rng.integers(0, pool.size)])
            chosen = patches[choice]

            keep_old = np.zeros((patch, patch), dtype=bool)
            if bx > 0:
                existing = canvas[by : by + patch, bx : bx + overlap]
                seam_err = ((existing - chosen[:, :overlap]) ** 2).sum(axis=2)
                cut = _min_cut_path(seam_err)
                cols = np.arange(overlap)
                keep_old[:, :overlap] |= cols[None, :] < cut[:, None]
            if by > 0:
                existing = canvas[by : by + overlap, bx : bx + patch]
                seam_err = ((existing - chosen[:overlap, :]) ** 2).sum(axis=2)
                cut = _min_cut_path(seam_err.T)
                rows = np.arange(overlap)
                keep_old[:overlap, :] |= rows[:, None] < cut[None, :]

            target = canvas[by : by + patch, bx : bx + patch]
            target[~keep_old] = chosen[~keep_old]

    out = canvas[:size, :size]
    # Guard the contract that the tile's mean stays near the region's mean.
    region_mean = source[mask].reshape(-1, 3).mean(axis=0)
    drift = region_mean - out.reshape(-1, 3).mean(axis=0)
    if np.abs(drift).max() > 0.05:
        out = np.clip(out + drift, 0.0, 1.0)
    return out.astype(np.float32)
