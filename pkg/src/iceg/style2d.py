"""Per-region style directives and their application to 2D views.

A style spec maps edit-image mask ids to directives: recolor (explicit
hue/saturation or "from-region"), texture (a synthesized square canvas), or
both. Rendering an edited view walks the target view's regions, looks up
each region's matched edit region, and applies texture first, then color,
then the optional value shift -- mirroring the 3D stage order so 2D
previews agree with the trained result.

Color sources: explicit values win; "from-region" uses the matched edit
region's mean hue/saturation; texture-only regions take the canvas's mean
hue/saturation (the follow-up color round restores vividness the texture
round washes out).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .color_ops import apply_color_to_region, region_mean_hsv, shift_value
from .errors import ConsistencyError, ParameterError, PlanError
from .features import FeatureProvider, MatchAssignment, RegionDescriptor, describe_region, extract_features
from .quilting import synthesize_texture
from .segmentation import MaskSet, RegionMask, SegmenterBackend, segment_and_consolidate

MODES = ("none", "color", "texture", "both")
FROM_REGION = "from-region"
MIN_CANVAS_SIZE = 64
MIN_TEXTURE_AREA = 16


@dataclass
class TextureCanvas:
    """Square synthesized texture tile sourced from one edit region."""

    pixels: np.ndarray  # (S, S, 3) float32 in [0, 1]
    source_mask_id: int = -1

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != self.pixels.shape[1] or self.pixels.shape[2] != 3:
            raise ParameterError("texture canvas must be square (S, S, 3)")
        if self.pixels.shape[0] < MIN_CANVAS_SIZE:
            raise ParameterError(f"texture canvas must be at least {MIN_CANVAS_SIZE} px")

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    def mean_hs(self):
        full = np.ones(self.pixels.shape[:2], dtype=bool)
        return region_mean_hsv(self.pixels, full)


@dataclass
class RegionStyle:
    mode: str = "none"
    color_hs: tuple[float, float] | str | None = None  # (hue deg, sat) or "from-region"
    value_shift: float = 0.0
    texture_ref: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown style mode {self.mode!r}")
        if not -1.0 <= self.value_shift <= 1.0:
            raise ParameterError("value_shift must be in [-1, 1]")
        if isinstance(self.color_hs, (list, tuple)):
            hue, sat = self.color_hs
            if not 0.0 <= float(hue) < 360.0 or not 0.0 <= float(sat) <= 1.0:
                raise ParameterError("color_hs must be (hue in [0,360), sat in [0,1])")
            self.color_hs = (float(hue), float(sat))
        elif self.color_hs is not None and self.color_hs != FROM_REGION:
            raise ParameterError(f"color_hs must be a (hue, sat) pair or {FROM_REGION!r}")

    @property
    def wants_texture(self) -> bool:
        return self.mode in ("texture", "both")

    @property
    def wants_color(self) -> bool:
        # A texture directive implies a follow-up color pass using the
        # canvas's mean hue/saturation.
        return self.mode in ("color", "both", "texture")

    def to_dict(self) -> dict:
        hue = sat = None
        if isinstance(self.color_hs, tuple):
            hue, sat = self.color_hs
        return {
            "mode": self.mode,
            "hue": hue,
            "sat": sat,
            "value_shift": self.value_shift,
            "texture_ref": self.texture_ref,
            "color_source": FROM_REGION if self.color_hs == FROM_REGION else "explicit" if hue is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegionStyle":
        color_hs = None
        if data.get("color_source") == FROM_REGION:
            color_hs = FROM_REGION
        elif data.get("hue") is not None:
            color_hs = (float(data["hue"]), float(data.get("sat", 1.0)))
        return cls(
            mode=data.get("mode", "none"),
            color_hs=color_hs,
            value_shift=float(data.get("value_shift", 0.0)),
            texture_ref=data.get("texture_ref"),
        )


@dataclass
class StyleSpec:
    """edit mask_id -> RegionStyle. Unlisted regions default to mode=none."""

    regions: dict[int, RegionStyle] = field(default_factory=dict)

    def get(self, mask_id: int) -> RegionStyle:
        return self.regions.get(mask_id, RegionStyle())

    def any_texture(self) -> bool:
        return any(s.wants_texture for s in self.regions.values())

    def any_color(self) -> bool:
        return any(s.wants_color for s in self.regions.values())

    def to_dict(self) -> dict:
        return {str(mid): style.to_dict() for mid, style in sorted(self.regions.items())}

    @classmethod
    def from_dict(cls, data: dict) -> "StyleSpec":
        try:
            return cls(regions={int(mid): RegionStyle.from_dict(entry) for mid, entry in data.items()})
        except (TypeError, ValueError, KeyError) as e:
            raise PlanError(f"malformed style spec: {e}") from e


def build_texture_canvas(
    edit_image: np.ndarray,
    mask: np.ndarray | RegionMask,
    canvas_size: int,
    *,
    seed: int = 0,
    source_mask_id: int = -1,
) -> TextureCanvas:
    """Synthesize a square canvas from the masked source pixels (quilting)."""
    if isinstance(mask, RegionMask):
        source_mask_id = mask.mask_id if source_mask_id == -1 else source_mask_id
        mask = mask.bitmap
    mask = np.asarray(mask, dtype=bool)
    if canvas_size < MIN_CANVAS_SIZE:
        raise ParameterError(f"canvas_size must be >= {MIN_CANVAS_SIZE}")
    if int(mask.sum()) < MIN_TEXTURE_AREA:
        raise ParameterError(f"texture source mask needs >= {MIN_TEXTURE_AREA} pixels")
    pixels = synthesize_texture(edit_image, mask, canvas_size, seed=seed)
    return TextureCanvas(pixels=np.clip(pixels, 0.0, 1.0), source_mask_id=source_mask_id)


def apply_texture_to_region(image: np.ndarray, mask: np.ndarray, canvas: TextureCanvas) -> np.ndarray:
    """Paste the canvas onto the masked pixels.

    The canvas anchors at the mask's bounding-box top-left and tiles
    modularly when the box exceeds the canvas; unmasked pixels untouched.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ParameterError("mask shape does not match image")
    out = image.copy()
    if not mask.any():
        return out
    rows, cols = np.nonzero(mask)
    r0, c0 = int(rows.min()), int(cols.min())
    s = canvas.size
    out[rows, cols] = canvas.pixels[(rows - r0) % s, (cols - c0) % s]
    return out


@dataclass
class EditPlan:
    """Everything derived from the edit image, ready to apply to target views."""

    edit_image: np.ndarray
    edit_maskset: MaskSet
    edit_descriptors: list[RegionDescriptor]
    style: StyleSpec
    canvases: dict[int, TextureCanvas] = field(default_factory=dict)
    assignments: dict[str, MatchAssignment] = field(default_factory=dict)

    def validate(self) -> None:
        known = set(self.edit_maskset.mask_ids())
        for mid, style in self.style.regions.items():
            if mid not in known:
                raise PlanError(f"style references unknown edit mask {mid}")
            if style.wants_texture and mid not in self.canvases:
                raise PlanError(f"texture mode on mask {mid} but no canvas available")
            if style.mode in ("color", "both") and style.color_hs is None:
                raise PlanError(f"color mode on mask {mid} with no color source")

    def resolved_color(self, edit_mask_id: int):
        """(hue, sat) a directive applies, or None when no color pass is wanted."""
        style = self.style.get(edit_mask_id)
        if not style.wants_color:
            return None
        if isinstance(style.color_hs, tuple):
            return style.color_hs
        if style.mode == "texture":
            summary = self.canvases[edit_mask_id].mean_hs()
        else:  # from-region: the matched edit region's own mean color
            summary = region_mean_hsv(self.edit_image, self.edit_maskset.get(edit_mask_id).bitmap)
        return (summary.hue, summary.sat)


def build_edit_plan(
    edit_image: np.ndarray,
    style: StyleSpec,
    *,
    backend: SegmenterBackend,
    provider: FeatureProvider,
    max_masks: int,
    grid_side: int = 32,
    canvas_size: int = 128,
    seed: int = 0,
    canvases: dict[int, TextureCanvas] | None = None,
) -> EditPlan:
    """Segment + describe the edit image and synthesize any needed canvases."""
    maskset = segment_and_consolidate(edit_image, backend, max_masks, grid_side=grid_side, view_id="edit")
    featmap = extract_features(edit_image, provider, view_id="edit")
    descriptors = [describe_region(featmap, m) for m in maskset.masks]
    plan = EditPlan(
        edit_image=np.asarray(edit_image, dtype=np.float32),
        edit_maskset=maskset,
        edit_descriptors=descriptors,
        style=style,
        canvases=dict(canvases or {}),
    )
    for mid, region_style in style.regions.items():
        if region_style.wants_texture and mid not in plan.canvases:
            plan.canvases[mid] = build_texture_canvas(
                plan.edit_image, maskset.get(mid), canvas_size, seed=seed, source_mask_id=mid
            )
    plan.validate()
    return plan


def render_edited_view(
    view_pixels: np.ndarray,
    plan: EditPlan,
    maskset: MaskSet,
    assignment: MatchAssignment,
) -> np.ndarray:
    """Apply the plan to one target view (texture, then color, then value shift)."""
    missing = [m.mask_id for m in maskset.masks if m.mask_id not in assignment.entries]
    if missing:
        raise ConsistencyError(f"assignment missing target masks {missing}")
    out = np.asarray(view_pixels).copy()
    for mask in maskset.masks:
        edit_id = assignment.edit_id_for(mask.mask_id)
        style = plan.style.get(edit_id)
        if style.mode == "none":
            continue
        if style.wants_texture:
            out = apply_texture_to_region(out, mask.bitmap, plan.canvases[edit_id])
        color = plan.resolved_color(edit_id)
        if color is not None:
            out = apply_color_to_region(out, mask.bitmap, color[0], color[1])
        if style.value_shift != 0.0:
            out = shift_value(out, mask.bitmap, style.value_shift)
    return out


# ---------------------------------------------------------------------------
# Plan persistence: style.json per the documented schema, edit image and
# canvases as PNGs.
# ---------------------------------------------------------------------------


def save_png(pixels: np.ndarray, path) -> None:
    img8 = (np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img8).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def save_plan(plan: EditPlan, plan_dir, textures_dir) -> None:
    plan_dir = Path(plan_dir)
    plan_dir.mkdir(parents=True, exist_ok=True)
    textures_dir = Path(textures_dir)
    textures_dir.mkdir(parents=True, exist_ok=True)
    save_png(plan.edit_image, plan_dir / "edit_image.png")
    style = StyleSpec(regions=dict(plan.style.regions))
    for mid, canvas in plan.canvases.items():
        ref = f"canvas_{mid}.png"
        save_png(canvas.pixels, textures_dir / ref)
        if mid in style.regions:
            style.regions[mid].texture_ref = ref
    (plan_dir / "style.json").write_text(json.dumps(style.to_dict(), sort_keys=True, indent=2) + "\n")


def load_plan(
    plan_dir,
    textures_dir,
    *,
    backend: SegmenterBackend,
    provider: FeatureProvider,
    max_masks: int,
    grid_side: int = 32,
    canvas_size: int = 128,
    seed: int = 0,
) -> EditPlan:
    plan_dir = Path(plan_dir)
    textures_dir = Path(textures_dir)
    edit_image = load_png(plan_dir / "edit_image.png")
    style = StyleSpec.from_dict(json.loads((plan_dir / "style.json").read_text()))
    canvases = {}
    for mid, region_style in style.regions.items():
        if region_style.texture_ref:
            pixels = load_png(textures_dir / region_style.texture_ref)
            canvases[mid] = TextureCanvas(pixels=pixels, source_mask_id=mid)
    return build_edit_plan(
        edit_image,
        style,
        backend=backend,
        provider=provider,
        max_masks=max_masks,
        grid_side=grid_side,
        canvas_size=canvas_size,
        seed=seed,
        canvases=canvases,
    )
