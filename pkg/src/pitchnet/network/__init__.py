from .io import ModelFormatError, load_params, save_params
from .kernels import conv1d_valid, layer_norm, max_pool1d, relu, softmax
from .model import (
    CONFIGS,
    ArchitectureConfig,
    BlockConfig,
    NetworkParams,
    Normalization,
    backward,
    desk_config,
    forward,
    init_params,
    reference_config,
    tiny_config,
)

__all__ = [
    "ArchitectureConfig", "BlockConfig", "CONFIGS", "ModelFormatError", "NetworkParams",
    "Normalization", "backward", "conv1d_valid", "desk_config", "forward", "init_params",
    "layer_norm", "load_params", "max_pool1d", "reference_config", "relu", "save_params",
    "softmax", "tiny_config",
]
