"""On-disk project layout and configuration.

A project directory holds::

    project.json          name, dataset reference, config
    checkpoints/*.ckpt    gaussian scenes (see iceg.checkpoints)
    edits/                edit plans, 2D-edited views, texture canvases
    renders/              re-rendered views per job
    jobs/                 job records and event logs

``project.json`` is written canonically (sorted keys, fixed indentation) so
the config round-trips byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkpoints import load_checkpoint_full, save_checkpoint
from .dataset import SceneDataset, load_dataset
from .errors import NotFoundError, ParameterError, SceneFormatError
from .gaussians import GaussianSet
from .losses import LossConfig

PROJECT_FILE = "project.json"


@dataclass
class ProjectConfig:
    """Every knob the pipeline reads, persisted with the project."""

    sample_rate: float = 0.2
    max_masks: int = 6
    grid_side: int = 32
    canvas_size: int = 128
    seed: int = 0
    color_iters: int = 2000
    texture_iters: int = 3000
    color_lr: float = 2.5e-3
    param_lr: float = 1e-3
    checkpoint_every: int = 500
    log_every: int = 50
    l1_weight: float = 0.8
    gs_reg_weight: float = 0.5
    ssim_window: int = 11
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4
    background: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    match_normalization: str = "target"
    feature_provider: str = "classical"
    segmenter: str = "color-kmeans"
    nnfm_layers: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.sample_rate <= 1.0:
            raise ParameterError("sample_rate must be in (0, 1]")
        if self.max_masks < 1:
            raise ParameterError("max_masks must be >= 1")
        if self.match_normalization not in ("target", "edit_count"):
            raise ParameterError("match_normalization must be 'target' or 'edit_count'")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            l1_weight=self.l1_weight,
            gs_reg_weight=self.gs_reg_weight,
            nnfm_layers=tuple(self.nnfm_layers),
            ssim_window=self.ssim_window,
            ssim_c1=self.ssim_c1,
            ssim_c2=self.ssim_c2,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def overridden(self, **overrides) -> "ProjectConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            if value is not None:
                if key not in data:
                    raise ParameterError(f"unknown config key: {key}")
                data[key] = value
        return ProjectConfig.from_dict(data)


def _canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


@dataclass
class Project:
    root: Path
    name: str
    dataset_ref: str
    config: ProjectConfig
    base_checkpoint: str = "checkpoints/base_0000000.ckpt"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def edits_dir(self) -> Path:
        return self.root / "edits"

    @property
    def renders_dir(self) -> Path:
        return self.root / "renders"

    @property
    def jobs_dir(self) -> Path:
        return self.root / "jobs"

    @classmethod
    def create(cls, root, dataset_ref: str, name: str | None = None, config: ProjectConfig | None = None) -> "Project":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        project = cls(
            root=root,
            name=name or root.name,
            dataset_ref=str(dataset_ref),
            config=config or ProjectConfig(),
        )
        for sub in ("checkpoints", "edits", "edits/textures", "renders", "jobs"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        project.save()
        return project

    @classmethod
    def open(cls, root) -> "Project":
        root = Path(root)
        pfile = root / PROJECT_FILE
        if not pfile.exists():
            raise NotFoundError(f"no project at {root}")
        try:
            data = json.loads(pfile.read_text())
        except json.JSONDecodeError as e:
            raise SceneFormatError(f"{pfile}: invalid JSON ({e})") from e
        return cls(
            root=root,
            name=data.get("name", root.name),
            dataset_ref=data["dataset"],
            config=ProjectConfig.from_dict(data.get("config", {})),
            base_checkpoint=data.get("base_checkpoint", "checkpoints/base_0000000.ckpt"),
        )

    def save(self) -> None:
        payload = {
            "name": self.name,
            "dataset": self.dataset_ref,
            "base_checkpoint": self.base_checkpoint,
            "config": self.config.to_dict(),
        }
        (self.root / PROJECT_FILE).write_text(_canonical_json(payload))

    def checkpoint_paths(self) -> list[Path]:
        return sorted(self.checkpoints_dir.rglob("*.ckpt"))

    def dataset_path(self) -> Path:
        p = Path(self.dataset_ref)
        return p if p.is_absolute() else self.root / p

    def load_scene(self) -> SceneDataset:
        return load_dataset(self.dataset_path(), name=self.name)

    def load_base_gaussians(self) -> GaussianSet:
        path = self.root / self.base_checkpoint
        if not path.exists():
            raise NotFoundError(f"project has no base checkpoint at {path}")
        gaussians, _, _, _ = load_checkpoint_full(path)
        return gaussians

    def save_base_gaussians(self, gaussians: GaussianSet) -> Path:
        path = save_checkpoint(self.checkpoints_dir, gaussians, "base", 0)
        self.base_checkpoint = str(path.relative_to(self.root))
        self.save()
        return path
