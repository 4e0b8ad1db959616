"""Two-branch image enhancement with mutual global-local guidance.

A self-contained toolkit: a small reverse-mode autodiff core over numpy, the
enhancement network itself, a deterministic training loop on synthetic
low-light data, image quality metrics, and binary/PPM persistence.  Compute
kernels come from a compiled extension when available, with a pure-numpy
fallback (see ``mgn.kernels.backend_name``).
"""

from .config import ConfigError, LossWeights, TrainConfig, default_config, load_config, parse_config
from .fileio import FormatError, load_checkpoint, read_ppm, save_checkpoint, write_ppm
from .gradcheck import battery, grad_check, layer_report
from .kernels import backend_name
from .metrics import l2_error_map, psnr, ssim
from .model import ForwardOutputs, Model, ModelConfig, build_model, flop_breakdown, param_count
from .rng import Rng
from .tensor import Tensor, concat, grad_enabled, no_grad, softmax
from .train import Adam, TrainingDiverged, TrainResult, cosine_lr, synth_dataset, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ConfigError",
    "FormatError",
    "ForwardOutputs",
    "LossWeights",
    "Model",
    "ModelConfig",
    "Rng",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "backend_name",
    "battery",
    "build_model",
    "concat",
    "cosine_lr",
    "default_config",
    "flop_breakdown",
    "grad_check",
    "grad_enabled",
    "l2_error_map",
    "layer_report",
    "load_checkpoint",
    "load_config",
    "no_grad",
    "param_count",
    "parse_config",
    "psnr",
    "read_ppm",
    "save_checkpoint",
    "softmax",
    "ssim",
    "synth_dataset",
    "total_loss",
    "train",
    "write_ppm",
    "__version__",
]
