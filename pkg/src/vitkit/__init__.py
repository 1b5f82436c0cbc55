"""Vision-transformer classification toolkit with a self-contained autodiff engine."""

from vitkit.tensor import Tensor, Parameter, backward, sgd_step
from vitkit.vit import ViTConfig, ViTModel, preset_config, parameter_count

__all__ = [
    "Tensor",
    "Parameter",
    "backward",
    "sgd_step",
    "ViTConfig",
    "ViTModel",
    "preset_config",
    "parameter_count",
]
