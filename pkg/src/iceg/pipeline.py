"""Edit-job orchestration: sample, segment, match, edit in 2D, finetune in 3D.

A job walks a fixed stage order and persists its record after every state
change, so an interrupted job resumes from the last completed stage (and,
inside a training stage, from the last checkpoint -- bit-exactly, because
per-iteration randomness is a pure function of the seed and iteration and
the optimizer state rides in the checkpoint).

The plan is persisted to disk up front and always reloaded from there
before running stages; since images and canvases live as 8-bit PNGs, the
first run and any resumed run see byte-identical inputs, and a standalone
preview of the same view reproduces the job's 2D edit exactly.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoints import load_checkpoint_full, save_checkpoint
from .dataset import SceneDataset, sample_edit_views
from .errors import IcegError, JobStateError, NotFoundError, ParameterError, PlanError
from .features import ClassicalFeatureProvider, MatchAssignment, classical_feature_grid, extract_features, match_regions
from .gaussians import GaussianSet
from .losses import RegionStyleTarget
from .project import Project, ProjectConfig
from .rasterize import rasterize
from .segmentation import ColorKMeansBackend, MaskSet, load_maskset, save_maskset, segment_and_consolidate
from .style2d import (
    EditPlan,
    StyleSpec,
    build_edit_plan,
    build_texture_canvas,
    load_plan,
    load_png,
    render_edited_view,
    save_plan,
    save_png,
)
from .training import ViewTarget, finetune_color, finetune_texture

PENDING = "PENDING"
SEGMENTING = "SEGMENTING"
MATCHING = "MATCHING"
EDITING_2D = "EDITING_2D"
TRAINING_TEXTURE = "TRAINING_TEXTURE"
TRAINING_COLOR = "TRAINING_COLOR"
DONE = "DONE"
FAILED = "FAILED"

STAGE_ORDER = (PENDING, SEGMENTING, MATCHING, EDITING_2D, TRAINING_TEXTURE, TRAINING_COLOR, DONE)


class SimulatedInterrupt(IcegError):
    """Raised by the test hook that emulates killing the process mid-stage."""


def make_segmenter(config: ProjectConfig):
    if config.segmenter == "color-kmeans":
        return ColorKMeansBackend()
    raise ParameterError(f"unknown segmenter backend {config.segmenter!r} (SAM must be injected at runtime)")


def make_feature_provider(config: ProjectConfig):
    if config.feature_provider == "classical":
        return ClassicalFeatureProvider()
    raise ParameterError(f"unknown feature provider {config.feature_provider!r}")


@dataclass
class EditJob:
    """Persistent record of one edit job."""

    job_id: str
    state: str = PENDING
    seed: int = 0
    config: dict = field(default_factory=dict)
    progress: dict = field(default_factory=dict)
    sampled_view_ids: list = field(default_factory=list)
    assignments: dict = field(default_factory=dict)  # view_id -> MatchAssignment dict
    edited_views: dict = field(default_factory=dict)  # view_id -> relative path
    stages_done: list = field(default_factory=list)
    stages_skipped: list = field(default_factory=list)
    last_checkpoint: dict | None = None  # {"stage", "iteration", "path"}
    final_checkpoint: str | None = None
    failure: dict | None = None
    created_at: float = 0.0
    updated_at: float = 0.0

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "state": self.state,
            "seed": self.seed,
            "config": self.config,
            "progress": self.progress,
            "sampled_view_ids": self.sampled_view_ids,
            "assignments": self.assignments,
            "edited_views": self.edited_views,
            "stages_done": self.stages_done,
            "stages_skipped": self.stages_skipped,
            "last_checkpoint": self.last_checkpoint,
            "final_checkpoint": self.final_checkpoint,
            "failure": self.failure,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EditJob":
        return cls(**{k: data.get(k, v) for k, v in _JOB_DEFAULTS.items()})


_JOB_DEFAULTS = {
    "job_id": "",
    "state": PENDING,
    "seed": 0,
    "config": {},
    "progress": {},
    "sampled_view_ids": [],
    "assignments": {},
    "edited_views": {},
    "stages_done": [],
    "stages_skipped": [],
    "last_checkpoint": None,
    "final_checkpoint": None,
    "failure": None,
    "created_at": 0.0,
    "updated_at": 0.0,
}


class JobStore:
    """Single-writer persistence for job records and their event logs."""

    def __init__(self, project: Project):
        self.project = project
        self.jobs_dir = project.jobs_dir
        self.jobs_dir.mkdir(parents=True, exist_ok=True)

    def path(self, job_id: str) -> Path:
        return self.jobs_dir / f"{job_id}.json"

    def exists(self, job_id: str) -> bool:
        return self.path(job_id).exists()

    def save(self, job: EditJob) -> None:
        job.updated_at = time.time()
        tmp = self.path(job.job_id).with_suffix(".json.tmp")
        tmp.write_text(json.dumps(job.to_dict(), sort_keys=True, indent=2) + "\n")
        tmp.replace(self.path(job.job_id))

    def load(self, job_id: str) -> EditJob:
        path = self.path(job_id)
        if not path.exists():
            raise NotFoundError(f"no job {job_id!r}")
        return EditJob.from_dict(json.loads(path.read_text()))

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.jobs_dir.glob("*.json"))

    def log_event(self, job_id: str, stage: str, iteration: int, loss: float | None = None) -> None:
        event = {"ts": time.time(), "stage": stage, "iter": iteration}
        if loss is not None:
            event["loss"] = loss
        with open(self.jobs_dir / f"{job_id}.events.jsonl", "a") as f:
            f.write(json.dumps(event) + "\n")


def _job_paths(project: Project, job_id: str) -> dict[str, Path]:
    base = project.edits_dir / job_id
    return {
        "plan": base / "plan",
        "textures": project.edits_dir / "textures" / job_id,
        "masks": base / "masks",
        "views": base / "views",
        "checkpoints": project.checkpoints_dir / job_id,
        "renders": project.renders_dir / job_id,
    }


class _JobRunner:
    def __init__(self, project: Project, job: EditJob, config: ProjectConfig, interrupt_at=None):
        self.project = project
        self.job = job
        self.config = config
        self.store = JobStore(project)
        self.paths = _job_paths(project, job.job_id)
        self.interrupt_at = interrupt_at
        self.dataset: SceneDataset = project.load_scene()
        self.backend = make_segmenter(config)
        self.provider = make_feature_provider(config)
        self.plan: EditPlan | None = None
        self._masksets: dict[str, MaskSet] = {}

    # -- state bookkeeping ---------------------------------------------------

    def _enter(self, state: str) -> None:
        if STAGE_ORDER.index(state) < STAGE_ORDER.index(self.job.state):
            raise JobStateError(f"cannot move from {self.job.state} back to {state}")
        self.job.state = state
        self.store.save(self.job)

    def _finish_stage(self, state: str) -> None:
        if state not in self.job.stages_done:
            self.job.stages_done.append(state)
        self.job.progress[state] = 1.0
        self.store.save(self.job)

    def _skip_stage(self, state: str) -> None:
        if state not in self.job.stages_skipped:
            self.job.stages_skipped.append(state)
        self.store.save(self.job)

    # -- plan ------------------------------------------------------------------

    def persist_plan(self, plan: EditPlan) -> None:
        save_plan(plan, self.paths["plan"], self.paths["textures"])

    def load_plan_from_disk(self) -> None:
        self.plan = load_plan(
            self.paths["plan"],
            self.paths["textures"],
            backend=self.backend,
            provider=self.provider,
            max_masks=self.config.max_masks,
            grid_side=self.config.grid_side,
            canvas_size=self.config.canvas_size,
            seed=self.job.seed,
        )

    # -- stages ----------------------------------------------------------------

    def run(self) -> EditJob:
        try:
            self.load_plan_from_disk()
            self.stage_segmenting()
            self.stage_matching()
            self.stage_editing_2d()
            self.stage_training_texture()
            self.stage_training_color()
            self.stage_done()
        except Exception as e:
            self.job.failure = {"stage": self.job.state, "message": str(e)}
            self.job.state = FAILED
            self.store.save(self.job)
            raise
        return self.job

    def _maskset_path(self, view_id: str) -> Path:
        return self.paths["masks"] / f"{view_id}.json"

    def maskset_for(self, view_id: str) -> MaskSet:
        if view_id not in self._masksets:
            self._masksets[view_id] = load_maskset(self._maskset_path(view_id))
        return self._masksets[view_id]

    def stage_segmenting(self) -> None:
        if SEGMENTING in self.job.stages_done:
            return
        self._enter(SEGMENTING)
        if not self.job.sampled_view_ids:
            self.job.sampled_view_ids = sample_edit_views(self.dataset, self.config.sample_rate, self.job.seed)
        self.paths["masks"].mkdir(parents=True, exist_ok=True)
        n = len(self.job.sampled_view_ids)
        for i, vid in enumerate(self.job.sampled_view_ids):
            view, _ = self.dataset.get(vid)
            maskset = segment_and_consolidate(
                view.pixels, self.backend, self.config.max_masks, grid_side=self.config.grid_side, view_id=vid
            )
            save_maskset(maskset, self._maskset_path(vid))
            self._masksets[vid] = maskset
            self.job.progress[SEGMENTING] = (i + 1) / n
        self._finish_stage(SEGMENTING)

    def stage_matching(self) -> None:
        if MATCHING in self.job.stages_done:
            return
        self._enter(MATCHING)
        n = len(self.job.sampled_view_ids)
        for i, vid in enumerate(self.job.sampled_view_ids):
            view, _ = self.dataset.get(vid)
            featmap = extract_features(view.pixels, self.provider, view_id=vid)
            assignment = match_regions(
                self.maskset_for(vid), featmap, self.plan.edit_descriptors,
                normalization=self.config.match_normalization,
            )
            self.job.assignments[vid] = assignment.to_dict()
            self.job.progress[MATCHING] = (i + 1) / n
        self._finish_stage(MATCHING)

    def stage_editing_2d(self) -> None:
        if EDITING_2D in self.job.stages_done:
            return
        self._enter(EDITING_2D)
        self.paths["views"].mkdir(parents=True, exist_ok=True)
        n = len(self.job.sampled_view_ids)
        for i, vid in enumerate(self.job.sampled_view_ids):
            view, _ = self.dataset.get(vid)
            assignment = MatchAssignment.from_dict(self.job.assignments[vid])
            edited = render_edited_view(view.pixels, self.plan, self.maskset_for(vid), assignment)
            out_path = self.paths["views"] / f"{vid}.png"
            save_png(edited, out_path)
            self.job.edited_views[vid] = str(out_path.relative_to(self.project.root))
            self.job.progress[EDITING_2D] = (i + 1) / n
        self._finish_stage(EDITING_2D)

    # -- training --------------------------------------------------------------

    def _view_targets(self, with_regions: bool) -> list[ViewTarget]:
        targets = []
        style_feats: dict[int, torch.Tensor] = {}
        if with_regions:
            for mid, canvas in self.plan.canvases.items():
                if self.plan.style.get(mid).wants_texture:
                    with torch.no_grad():
                        style_feats[mid] = classical_feature_grid(torch.from_numpy(canvas.pixels))
        for vid in self.job.sampled_view_ids:
            _, camera = self.dataset.get(vid)
            pixels = load_png(self.project.root / self.job.edited_views[vid])
            regions = []
            if with_regions:
                maskset = self.maskset_for(vid)
                assignment = MatchAssignment.from_dict(self.job.assignments[vid])
                for mid, feats in style_feats.items():
                    union = np.zeros(maskset.shape, dtype=bool)
                    for mask in maskset.masks:
                        if assignment.edit_id_for(mask.mask_id) == mid:
                            union |= mask.bitmap
                    if union.any():
                        regions.append(RegionStyleTarget(mask=union, style_feat=feats))
            targets.append(ViewTarget(pixels=pixels, camera=camera, regions=regions))
        return targets

    def _start_gaussians(self, stage_name: str) -> tuple[GaussianSet, int, dict]:
        """Initial parameters, start iteration and optimizer blocks for a stage."""
        ckpt = self.job.last_checkpoint
        if ckpt and ckpt["stage"] == stage_name:
            gaussians, _, iteration, extras = load_checkpoint_full(self.project.root / ckpt["path"])
            return gaussians, iteration, extras
        if ckpt:  # a previous stage finished training; chain from its result
            gaussians, _, _, _ = load_checkpoint_full(self.project.root / ckpt["path"])
            return gaussians, 0, {}
        return self.project.load_base_gaussians(), 0, {}

    def _train_stage(self, state: str, stage_name: str, train_fn, iters: int, with_regions: bool) -> None:
        if state in self.job.stages_done:
            return
        self._enter(state)
        views = self._view_targets(with_regions)
        gaussians, start_iter, opt_blocks = self._start_gaussians(stage_name)
        cfg = self.config.loss_config()

        def on_checkpoint(step, g, blocks):
            path = save_checkpoint(self.paths["checkpoints"], g.detach_clone(), stage_name, step, blocks)
            self.job.last_checkpoint = {
                "stage": stage_name,
                "iteration": step,
                "path": str(path.relative_to(self.project.root)),
            }
            self.job.progress[state] = step / iters if iters else 1.0
            self.store.save(self.job)
            if self.interrupt_at == (state, step):
                raise SimulatedInterrupt(f"simulated kill at {state} iteration {step}")

        def on_log(step, loss):
            self.store.log_event(self.job.job_id, state, step, loss)
            self.job.progress[state] = step / iters if iters else 1.0

        result = train_fn(
            gaussians,
            views,
            iters,
            cfg,
            seed=self.job.seed,
            color_lr=self.config.color_lr,
            param_lr=self.config.param_lr,
            background=tuple(self.config.background),
            start_iter=start_iter,
            opt_blocks=opt_blocks,
            checkpoint_every=self.config.checkpoint_every,
            on_checkpoint=on_checkpoint,
            log_every=self.config.log_every,
            on_log=on_log,
            snapshot_dir=self.paths["checkpoints"],
        )
        path = save_checkpoint(self.paths["checkpoints"], result.gaussians, stage_name, iters, result.opt_blocks)
        self.job.last_checkpoint = {
            "stage": stage_name,
            "iteration": iters,
            "path": str(path.relative_to(self.project.root)),
        }
        self._finish_stage(state)

    def stage_training_texture(self) -> None:
        if not self.plan.style.any_texture():
            self._skip_stage(TRAINING_TEXTURE)
            return
        self._train_stage(TRAINING_TEXTURE, "texture", finetune_texture, self.config.texture_iters, True)

    def stage_training_color(self) -> None:
        if not self.plan.style.any_color():
            self._skip_stage(TRAINING_COLOR)
            return
        self._train_stage(TRAINING_COLOR, "color", finetune_color, self.config.color_iters, False)

    def stage_done(self) -> None:
        if self.job.state == DONE:
            return
        if self.job.last_checkpoint:
            gaussians, _, _, _ = load_checkpoint_full(self.project.root / self.job.last_checkpoint["path"])
        else:
            gaussians = self.project.load_base_gaussians()
        final = save_checkpoint(self.paths["checkpoints"], gaussians, "final", 0)
        self.job.final_checkpoint = str(final.relative_to(self.project.root))

        self.paths["renders"].mkdir(parents=True, exist_ok=True)
        h, w = self.dataset.resolution
        with torch.no_grad():
            for view, camera in self.dataset.views:
                img = rasterize(gaussians, camera, w, h, background=tuple(self.config.background)).image
                save_png(img.numpy(), self.paths["renders"] / f"{view.view_id}.png")
        self._enter(DONE)


def run_edit_job(
    project: Project,
    plan: EditPlan | None = None,
    config: ProjectConfig | None = None,
    seed: int | None = None,
    job_id: str | None = None,
    interrupt_at: tuple[str, int] | None = None,
) -> EditJob:
    """Run (or resume) an edit job to DONE. Raises after persisting FAILED."""
    config = config or project.config
    store = JobStore(project)

    if job_id is not None and store.exists(job_id):
        job = store.load(job_id)
        if job.state == DONE:
            raise JobStateError(f"job {job_id!r} already DONE; re-running is rejected")
        if job.state == FAILED:  # resume from the last completed stage
            job.state = _resume_state(job)
            job.failure = None
        config = ProjectConfig.from_dict(job.config) if job.config else config
    else:
        if plan is None:
            raise ParameterError("a new job needs an edit plan")
        job = create_edit_job(project, plan, config=config, seed=seed, job_id=job_id)

    runner = _JobRunner(project, job, config, interrupt_at=interrupt_at)
    return runner.run()


def _resume_state(job: EditJob) -> str:
    for state in reversed(STAGE_ORDER[:-1]):
        if state in job.stages_done:
            return state
    return PENDING


def create_edit_job(
    project: Project,
    plan: EditPlan,
    config: ProjectConfig | None = None,
    seed: int | None = None,
    job_id: str | None = None,
) -> EditJob:
    """Persist a new PENDING job (record + plan) without running it."""
    config = config or project.config
    store = JobStore(project)
    if job_id is not None and store.exists(job_id):
        raise JobStateError(f"job {job_id!r} already exists")
    plan.validate()
    project.load_base_gaussians()  # precondition: a trained base scene exists
    job = EditJob(
        job_id=job_id or f"job-{uuid.uuid4().hex[:12]}",
        seed=config.seed if seed is None else int(seed),
        config=config.to_dict(),
        created_at=time.time(),
    )
    paths = _job_paths(project, job.job_id)
    save_plan(plan, paths["plan"], paths["textures"])
    store.save(job)
    return job


def resolve_image_ref(project: Project, ref: str, dataset: SceneDataset | None = None) -> np.ndarray:
    """Resolve an edit-image reference: ``view:<id>``, a data URI, or a path."""
    if ref.startswith("view:"):
        dataset = dataset or project.load_scene()
        view, _ = dataset.get(ref[5:])
        return view.pixels
    if ref.startswith("data:"):
        import base64
        import io

        from PIL import Image

        payload = ref.split(",", 1)[1]
        with Image.open(io.BytesIO(base64.b64decode(payload))) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    path = Path(ref)
    if not path.is_absolute():
        path = project.root / path
    if not path.exists():
        raise NotFoundError(f"edit image {ref!r} not found")
    return load_png(path)


def resolve_plan(project: Project, spec: dict, config: ProjectConfig | None = None) -> EditPlan:
    """Build an EditPlan from its wire/CLI JSON form.

    ``spec`` = {"edit_image": ref, "style": {mask_id: {...}}, "max_masks"?}.
    Style entries may carry ``texture_ref`` image references (path or data
    URI); the referenced image is the texture sample the canvas is quilted
    from.
    """
    config = config or project.config
    if not isinstance(spec, dict) or "edit_image" not in spec or "style" not in spec:
        raise PlanError("plan needs 'edit_image' and 'style' entries")
    edit_image = resolve_image_ref(project, str(spec["edit_image"]))
    style = StyleSpec.from_dict(spec["style"])
    max_masks = int(spec.get("max_masks", config.max_masks))

    canvases = {}
    for mid, region_style in style.regions.items():
        if region_style.wants_texture and region_style.texture_ref:
            sample = resolve_image_ref(project, region_style.texture_ref)
            full = np.ones(sample.shape[:2], dtype=bool)
            canvases[mid] = build_texture_canvas(
                sample, full, config.canvas_size, seed=config.seed, source_mask_id=mid
            )
            region_style.texture_ref = None
    return build_edit_plan(
        edit_image,
        style,
        backend=make_segmenter(config),
        provider=make_feature_provider(config),
        max_masks=max_masks,
        grid_side=config.grid_side,
        canvas_size=config.canvas_size,
        seed=config.seed,
        canvases=canvases,
    )


def default_color_transfer_style(plan_maskset_ids: list[int]) -> dict:
    """Correspondence-mode default: every edit region recolors its matches."""
    return {str(mid): {"mode": "color", "color_source": "from-region"} for mid in plan_maskset_ids}


def correspondence_plan_spec(project: Project, edit_image_ref: str, config: ProjectConfig | None = None) -> dict:
    """Plan spec for conditional-image editing: recolor every matched region."""
    config = config or project.config
    edit_image = resolve_image_ref(project, edit_image_ref)
    maskset = segment_and_consolidate(
        edit_image, make_segmenter(config), config.max_masks, grid_side=config.grid_side
    )
    return {
        "edit_image": edit_image_ref,
        "style": default_color_transfer_style(maskset.mask_ids()),
        "max_masks": config.max_masks,
    }


def preview_edit(project: Project, view_id: str, plan: EditPlan, config: ProjectConfig | None = None) -> np.ndarray:
    """Segment + match + apply the plan to a single view; pure and read-only.

    Produces exactly the bytes the corresponding 2D edit inside a job would,
    for the same plan and config.
    """
    config = config or project.config
    dataset = project.load_scene()
    if view_id not in dataset.view_ids():
        raise NotFoundError(f"no view {view_id!r} in scene {dataset.name!r}")
    plan.validate()
    backend = make_segmenter(config)
    provider = make_feature_provider(config)
    view, _ = dataset.get(view_id)
    maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, grid_side=config.grid_side, view_id=view_id)
    featmap = extract_features(view.pixels, provider, view_id=view_id)
    assignment = match_regions(maskset, featmap, plan.edit_descriptors, normalization=config.match_normalization)
    return render_edited_view(view.pixels, plan, maskset, assignment)
