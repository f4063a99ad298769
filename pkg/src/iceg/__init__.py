"""Image-conditioned color/texture editing of 3D Gaussian-splat scenes.

Pick an edit image (or recolor a view by hand), match its regions to every
sampled dataset view in feature space, transfer colors and textures in 2D,
then push the edit into the 3D scene with a two-stage differentiable
finetune: texture first (nearest-neighbor feature loss), color second
(L1/SSIM).
"""

from .checkpoints import load_checkpoint, load_checkpoint_full, save_checkpoint
from .color_ops import HsvSummary, apply_color_to_region, region_mean_hsv, shift_value
from .dataset import CameraPose, SceneDataset, ViewImage, load_dataset, sample_edit_views, save_dataset
from .errors import (
    BackendError,
    ConsistencyError,
    DatasetError,
    DegenerateSegmentationError,
    IcegError,
    IntegrityError,
    JobStateError,
    NotFoundError,
    ParameterError,
    PlanError,
    SceneFormatError,
    TrainingDivergedError,
    ViewLoadError,
)
from .features import (
    ClassicalFeatureProvider,
    FeatureMap,
    FeatureProvider,
    MatchAssignment,
    PrecomputedFeatureProvider,
    RegionDescriptor,
    describe_region,
    extract_features,
    match_regions,
    read_feature_map,
    write_feature_map,
)
from .gaussians import GaussianSet, RenderOutput
from .losses import LossConfig, loss_gs, loss_nnfm, loss_texture, ssim
from .pipeline import EditJob, JobStore, preview_edit, run_edit_job
from .project import Project, ProjectConfig
from .rasterize import rasterize
from .segmentation import (
    ColorKMeansBackend,
    MaskSet,
    RegionMask,
    SamBackend,
    SegmenterBackend,
    consolidate_masks,
    segment_view,
)
from .style2d import (
    EditPlan,
    RegionStyle,
    StyleSpec,
    TextureCanvas,
    apply_texture_to_region,
    build_edit_plan,
    build_texture_canvas,
    render_edited_view,
)
from .training import ViewTarget, finetune_color, finetune_texture

__version__ = "0.1.0"
