"""Trainable 3D Gaussian scene representation.

Parameters are stored pre-activation so unconstrained gradient steps keep
them valid: scales as log-scale, opacity as a logit, color as a sigmoid
logit. Quaternions are renormalized after every optimizer step; the
rasterizer additionally normalizes at use so intermediate states stay safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ParameterError

PARAM_NAMES = ("positions", "log_scales", "rotations", "opacity_logits", "color_logits")

# Color activation: sigmoid(x / COLOR_TEMPERATURE). The temperature keeps the
# slope near 1 over most of [0, 1] so color edits traverse the range in a few
# hundred optimizer steps (raw-valued colors do in canonical splatting) while
# still bounding activated colors strictly inside (0, 1).
COLOR_TEMPERATURE = 0.125


@dataclass
class GaussianSet:
    """A set of N anisotropic 3D gaussians.

    positions      (N, 3) scene units
    log_scales     (N, 3) log of per-axis standard deviation
    rotations      (N, 4) quaternion wxyz, unit-norm up to renormalization
    opacity_logits (N,)   sigmoid(.) is the activated opacity in (0, 1)
    color_logits   (N, 3) sigmoid(.) is the diffuse RGB in (0, 1)
    """

    positions: torch.Tensor
    log_scales: torch.Tensor
    rotations: torch.Tensor
    opacity_logits: torch.Tensor
    color_logits: torch.Tensor

    def __post_init__(self):
        n = self.positions.shape[0]
        shapes = {
            "positions": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "color_logits": (n, 3),
        }
        for name, shape in shapes.items():
            t = getattr(self, name)
            if tuple(t.shape) != shape:
                raise ParameterError(f"{name} must have shape {shape}, got {tuple(t.shape)}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    @property
    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def colors(self) -> torch.Tensor:
        return torch.sigmoid(self.color_logits / COLOR_TEMPERATURE)

    @property
    def unit_rotations(self) -> torch.Tensor:
        return self.rotations / self.rotations.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    def tensors(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def validate(self) -> None:
        """Raise if any parameter is non-finite or a quaternion has ~zero norm."""
        for name, t in self.tensors().items():
            if not torch.isfinite(t).all():
                raise ParameterError(f"non-finite values in {name}")
        norms = self.rotations.norm(dim=-1)
        if (norms < 1e-8).any():
            raise ParameterError("zero-norm quaternion")

    def renormalize_rotations_(self) -> None:
        with torch.no_grad():
            self.rotations /= self.rotations.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    def detach_clone(self, requires_grad: bool = False) -> "GaussianSet":
        kwargs = {}
        for name, t in self.tensors().items():
            c = t.detach().clone()
            c.requires_grad_(requires_grad)
            kwargs[name] = c
        return GaussianSet(**kwargs)

    def to(self, dtype: torch.dtype) -> "GaussianSet":
        return GaussianSet(**{name: t.to(dtype) for name, t in self.tensors().items()})

    def numpy_blocks(self) -> dict[str, np.ndarray]:
        """Float32 parameter blocks, used by the checkpoint writer."""
        return {
            name: t.detach().cpu().to(torch.float32).numpy().copy()
            for name, t in self.tensors().items()
        }

    @classmethod
    def from_numpy_blocks(cls, blocks: dict[str, np.ndarray]) -> "GaussianSet":
        try:
            tensors = {name: torch.from_numpy(np.ascontiguousarray(blocks[name])) for name in PARAM_NAMES}
        except KeyError as e:
            raise ParameterError(f"missing gaussian parameter block {e}") from e
        n = tensors["positions"].numel() // 3
        tensors["positions"] = tensors["positions"].reshape(n, 3)
        tensors["log_scales"] = tensors["log_scales"].reshape(n, 3)
        tensors["rotations"] = tensors["rotations"].reshape(n, 4)
        tensors["opacity_logits"] = tensors["opacity_logits"].reshape(n)
        tensors["color_logits"] = tensors["color_logits"].reshape(n, 3)
        return cls(**tensors)

    @classmethod
    def from_activated(
        cls,
        positions,
        scales,
        colors,
        opacities,
        rotations=None,
        dtype: torch.dtype = torch.float32,
    ) -> "GaussianSet":
        """Build a set from activated values (scales > 0, colors/opacities in (0,1))."""
        positions = torch.as_tensor(np.asarray(positions), dtype=dtype).reshape(-1, 3)
        n = positions.shape[0]
        scales = torch.as_tensor(np.asarray(scales), dtype=dtype).reshape(n, 3)
        colors = torch.as_tensor(np.asarray(colors), dtype=dtype).reshape(n, 3)
        opacities = torch.as_tensor(np.asarray(opacities), dtype=dtype).reshape(n)
        if rotations is None:
            rotations = torch.zeros(n, 4, dtype=dtype)
            rotations[:, 0] = 1.0
        else:
            rotations = torch.as_tensor(np.asarray(rotations), dtype=dtype).reshape(n, 4)
            rotations = rotations / rotations.norm(dim=-1, keepdim=True)
        eps = 1e-6
        return cls(
            positions=positions,
            log_scales=torch.log(scales.clamp_min(1e-12)),
            rotations=rotations,
            opacity_logits=torch.logit(opacities.clamp(eps, 1 - eps)),
            color_logits=COLOR_TEMPERATURE * torch.logit(colors.clamp(eps, 1 - eps)),
        )


def quaternion_to_rotation_matrix(q: torch.Tensor) -> torch.Tensor:
    """(N, 4) wxyz quaternions -> (N, 3, 3) rotation matrices. Normalizes first."""
    q = q / q.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


@dataclass
class RenderOutput:
    """Result of one rasterization: the image plus which inputs carry gradients."""

    image: torch.Tensor
    grad_available: dict[str, bool] = field(default_factory=dict)
