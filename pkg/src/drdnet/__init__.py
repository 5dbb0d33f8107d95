"""Two-branch single-image deraining on a self-contained autodiff core.

A rain-residual branch with channel gating predicts the streak layer; a
detail-repair branch built from dilated aggregation blocks restores what the
subtraction loses.  Everything runs on numpy: tensors, gradients, training,
synthetic rain, metrics, and the analysis tooling.
"""

from .blocks import (BatchNorm2d, Conv2d, DCCL, Module, PReLU,
                     RainResidualBlock, SDCAB, SEUnit)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, build_run_config, flatten_run_config, parse_config_file
from .errors import (CheckpointError, CompatibilityError, ConfigurationError,
                     DataError, DimensionError, DivergenceError, DrdError,
                     UsageError)
from .losses import LossConfig, loss_detail, loss_rain, loss_total
from .metrics import MetricReport, evaluate_pairs, psnr, report_lines, ssim
from .networks import DRDNet, DrdOutputs, NetworkConfig, count_parameters
from .pngio import load_image, save_image
from .rain import (HEAVY, LIGHT, PRESETS, RainPreset, RainSpec, StreakLayer,
                   apply_rain_model, load_dataset, make_dataset,
                   synth_streak_layer, synthetic_background, write_dataset)
from .rand import derive_rng, derive_seed
from .tensor import Tensor, backward, no_grad
from .training import Adam, TrainResult, lr_schedule, train
from .training_config import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "Adam", "BatchNorm2d", "Checkpoint", "CheckpointError",
    "CompatibilityError", "ConfigurationError", "Conv2d", "DCCL", "DRDNet",
    "DataError", "DimensionError", "DivergenceError", "DrdError",
    "DrdOutputs", "HEAVY", "LIGHT", "LossConfig", "MetricReport", "Module",
    "NetworkConfig", "PRESETS", "PReLU", "RainPreset", "RainResidualBlock",
    "RainSpec", "RunConfig", "SDCAB", "SEUnit", "StreakLayer", "Tensor",
    "TrainConfig", "TrainResult", "UsageError", "apply_rain_model",
    "backward", "build_run_config", "count_parameters", "derive_rng",
    "derive_seed", "evaluate_pairs", "flatten_run_config", "load_checkpoint",
    "load_dataset", "load_image", "loss_detail", "loss_rain", "loss_total",
    "lr_schedule", "make_dataset", "no_grad", "parse_config_file", "psnr",
    "report_lines", "save_checkpoint", "save_image", "ssim",
    "synth_streak_layer", "synthetic_background", "train", "write_dataset",
    "__version__",
]
