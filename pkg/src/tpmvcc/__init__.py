"""Multi-view density-map counting with tri-plane feature fusion."""

from .density import DensityMap, count_from_density, render_density
from .estimator import MultiViewCountingEstimator
from .geometry import (CameraModel, PlaneSpec, SamplingGrid, build_sampling_grid,
                       invert_homography, plane_homography, project_world_to_pixel)
from .model import FCN7Config, ModelConfig, TPMVCCModel
from .sampler import WarpOperator, bilinear_weight, warp
from .simulator import SceneConfig, emit_dataset, sample_layout
from .tensor import Tensor, concat_channels, conv2d, mse_loss, relu
from .training import TrainConfig, run_all_stages

__all__ = [
    "CameraModel", "DensityMap", "FCN7Config", "ModelConfig",
    "MultiViewCountingEstimator", "PlaneSpec", "SamplingGrid", "SceneConfig",
    "TPMVCCModel", "Tensor", "TrainConfig", "WarpOperator", "bilinear_weight",
    "build_sampling_grid", "concat_channels", "conv2d", "count_from_density",
    "emit_dataset", "invert_homography", "mse_loss", "plane_homography",
    "project_world_to_pixel", "relu", "render_density", "run_all_stages",
    "sample_layout", "warp",
]
