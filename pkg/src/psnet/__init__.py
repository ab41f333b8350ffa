from .config import Ablation, PSNetConfig, load_config, tiny_config
from .exceptions import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    InputShapeError,
    NonFiniteLossError,
    PSNetError,
)
from .network import PSNet, SingleStreamNet, count_parameters

__all__ = [
    "Ablation",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DatasetError",
    "InputShapeError",
    "NonFiniteLossError",
    "PSNet",
    "PSNetConfig",
    "PSNetError",
    "SingleStreamNet",
    "count_parameters",
    "load_config",
    "tiny_config",
]
