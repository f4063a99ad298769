"""The two finetuning stages that push 2D edits into the 3D scene.

Both stages run single-view gradient descent: each iteration picks one
edited view (a stateless function of the seed and the iteration index, so
interrupted runs resume bit-exactly), renders it, and steps an
adaptive-moment optimizer on the color parameters. Geometry stays frozen
by default -- these are appearance edits. The texture stage minimizes the
nearest-neighbor feature loss over the styled regions regularized by the
photometric loss; the color stage minimizes the photometric loss alone.

The optimizer is implemented here rather than taken from torch.optim so
its full state (moments + step count) serializes into checkpoint float32
blocks, which the bit-exact resume guarantee depends on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ParameterError, TrainingDivergedError
from .gaussians import GaussianSet
from .losses import LossConfig, RegionStyleTarget, loss_gs, loss_texture_multi_region
from .rasterize import rasterize

STAGE_TEXTURE = "texture"
STAGE_COLOR = "color"
_STAGE_IDS = {STAGE_TEXTURE: 1, STAGE_COLOR: 2}

DEFAULT_COLOR_LR = 2.5e-3
DEFAULT_PARAM_LR = 1e-3


def pick_view_index(seed: int, stage: str, iteration: int, n_views: int) -> int:
    """Stateless per-iteration view choice; identical across resumes."""
    rng = np.random.default_rng([int(seed), _STAGE_IDS[stage], int(iteration)])
    return int(rng.integers(n_views))


class Adam:
    """Adaptive-moment optimizer with float32-serializable state."""

    def __init__(self, params: dict[str, torch.Tensor], lrs: dict[str, float], betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lrs = lrs
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: torch.zeros_like(p) for k, p in params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in params.items()}

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            self.v[k].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            p.add_(-self.lrs[k] * m_hat / (v_hat.sqrt() + self.eps))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_blocks(self) -> dict[str, np.ndarray]:
        blocks = {"step": np.array([self.step_count], dtype=np.float32)}
        for k in self.params:
            blocks[f"m/{k}"] = self.m[k].detach().numpy().reshape(-1)
            blocks[f"v/{k}"] = self.v[k].detach().numpy().reshape(-1)
        return blocks

    def load_state_blocks(self, blocks: dict[str, np.ndarray]) -> None:
        if "step" in blocks:
            self.step_count = int(blocks["step"][0])
        for k, p in self.params.items():
            if f"m/{k}" in blocks:
                self.m[k] = torch.from_numpy(blocks[f"m/{k}"].copy()).reshape(p.shape)
            if f"v/{k}" in blocks:
                self.v[k] = torch.from_numpy(blocks[f"v/{k}"].copy()).reshape(p.shape)


@dataclass
class ViewTarget:
    """One edited training view: target pixels, camera, styled-region masks."""

    pixels: np.ndarray
    camera: object
    regions: list[RegionStyleTarget] = field(default_factory=list)


@dataclass
class TrainResult:
    gaussians: GaussianSet
    final_loss: float
    opt_blocks: dict[str, np.ndarray]
    losses: list[tuple[int, float]] = field(default_factory=list)


def _make_trainable(gaussians: GaussianSet, trainable: tuple[str, ...]) -> GaussianSet:
    g = gaussians.detach_clone()
    for name in trainable:
        if name not in g.tensors():
            raise ParameterError(f"unknown trainable parameter class {name!r}")
        getattr(g, name).requires_grad_(True)
    return g


def _run_stage(
    stage: str,
    gaussians: GaussianSet,
    views: list[ViewTarget],
    iters: int,
    config: LossConfig,
    *,
    loss_fn,
    seed: int = 0,
    trainable: tuple[str, ...] = ("color_logits",),
    color_lr: float = DEFAULT_COLOR_LR,
    param_lr: float = DEFAULT_PARAM_LR,
    background=(1.0, 1.0, 1.0),
    start_iter: int = 0,
    opt_blocks: dict[str, np.ndarray] | None = None,
    checkpoint_every: int = 0,
    on_checkpoint=None,
    log_every: int = 50,
    on_log=None,
    snapshot_dir=None,
) -> TrainResult:
    if not views:
        raise ParameterError("need at least one edited view")
    if iters < 0 or start_iter < 0 or start_iter > iters:
        raise ParameterError("bad iteration bounds")

    g = _make_trainable(gaussians, trainable)
    params = {name: getattr(g, name) for name in trainable}
    lrs = {name: (color_lr if name == "color_logits" else param_lr) for name in trainable}
    opt = Adam(params, lrs)
    if opt_blocks:
        opt.load_state_blocks(opt_blocks)

    targets = [torch.from_numpy(np.ascontiguousarray(v.pixels, dtype=np.float32)) for v in views]
    h, w = views[0].pixels.shape[:2]
    losses: list[tuple[int, float]] = []
    last = 0.0
    for it in range(start_iter, iters):
        vi = pick_view_index(seed, stage, it, len(views))
        opt.zero_grad()
        rendered = rasterize(g, views[vi].camera, w, h, background=background).image
        loss = loss_fn(rendered, targets[vi], views[vi])
        if not torch.isfinite(loss):
            snapshot = None
            if snapshot_dir is not None:
                from .checkpoints import save_checkpoint

                snapshot = save_checkpoint(snapshot_dir, g.detach_clone(), f"{stage}-diverged", it)
            raise TrainingDivergedError(stage, it, snapshot)
        loss.backward()
        opt.step()
        if "rotations" in trainable:
            g.renormalize_rotations_()
        last = float(loss.detach())
        step = it + 1
        if log_every and (step % log_every == 0 or step == iters):
            losses.append((step, last))
            if on_log is not None:
                on_log(step, last)
        if checkpoint_every and on_checkpoint is not None and step % checkpoint_every == 0 and step < iters:
            on_checkpoint(step, g, opt.state_blocks())

    return TrainResult(gaussians=g.detach_clone(), final_loss=last, opt_blocks=opt.state_blocks(), losses=losses)


def finetune_color(
    gaussians: GaussianSet,
    views: list[ViewTarget],
    iters: int,
    config: LossConfig | None = None,
    **kwargs,
) -> TrainResult:
    """Photometric finetune toward recolored views; geometry frozen."""
    cfg = config or LossConfig()

    def loss_fn(rendered, target, _view):
        return loss_gs(rendered, target, config=cfg)

    return _run_stage(STAGE_COLOR, gaussians, views, iters, cfg, loss_fn=loss_fn, **kwargs)


def finetune_texture(
    gaussians: GaussianSet,
    views: list[ViewTarget],
    iters: int,
    config: LossConfig | None = None,
    **kwargs,
) -> TrainResult:
    """NNFM + photometric finetune toward textured views; geometry frozen.

    Views with styled regions pull their region feature cells toward the
    canvas features; views without regions fall back to the photometric
    loss alone.
    """
    cfg = config or LossConfig()

    def loss_fn(rendered, target, view: ViewTarget):
        if view.regions:
            total, _ = loss_texture_multi_region(rendered, target, view.regions, cfg)
            return total
        return loss_gs(rendered, target, config=cfg)

    return _run_stage(STAGE_TEXTURE, gaussians, views, iters, cfg, loss_fn=loss_fn, **kwargs)
