"""Cross-modal 2D-to-3D feature distillation on synthetic scenes.

A frozen random 2-D convolutional teacher supervises a trainable 3-D
point encoder through two contrastive pathways (superpixel/superpoint
pooling and bird's-eye-view grids lifted via a learned depth
distribution) plus a sparse depth objective, all on a small numpy
autodiff core.
"""

from .autodiff import Tensor, finite_difference_check, make_op
from .bev import BevFeatureMap, BevGridConfig, lift_splat
from .config import ConfigError, PipelineConfig, build_config, dump_config, parse_config_file
from .checkpoint import CheckpointFormatError, load_tensors, save_tensors
from .encoders import DepthHead, Encoder2D, Encoder3D
from .geometry import (
    CameraIntrinsics,
    DepthBinning,
    PointCloud,
    RigidTransform,
    project_points,
    render_sparse_depth,
)
from .losses import LOSS_PRESETS, RATIO_GRID, LossConfig, bev_loss, depth_bce_loss, info_nce, ipv_loss, total_loss
from .superpixel import slic_segment
from .synth import SceneConfig, generate_scene, scene_consistency_check
from .train import (
    Models,
    NumericError,
    PretrainResult,
    ProbeResult,
    ablation_sweep,
    build_models,
    linear_probe,
    pretrain,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "make_op",
    "finite_difference_check",
    "BevFeatureMap",
    "BevGridConfig",
    "lift_splat",
    "ConfigError",
    "PipelineConfig",
    "build_config",
    "dump_config",
    "parse_config_file",
    "CheckpointFormatError",
    "load_tensors",
    "save_tensors",
    "DepthHead",
    "Encoder2D",
    "Encoder3D",
    "CameraIntrinsics",
    "DepthBinning",
    "PointCloud",
    "RigidTransform",
    "project_points",
    "render_sparse_depth",
    "LOSS_PRESETS",
    "RATIO_GRID",
    "LossConfig",
    "bev_loss",
    "depth_bce_loss",
    "info_nce",
    "ipv_loss",
    "total_loss",
    "slic_segment",
    "SceneConfig",
    "generate_scene",
    "scene_consistency_check",
    "Models",
    "NumericError",
    "PretrainResult",
    "ProbeResult",
    "ablation_sweep",
    "build_models",
    "linear_probe",
    "pretrain",
    "__version__",
]
