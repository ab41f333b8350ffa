from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigError

SEED_ENV_VAR = "PSNET_SEED"


class Ablation(str, Enum):
    """Network variants: the full model and the ablation rows it is compared against."""

    FULL = "full"
    BASELINE = "B"
    BASELINE_GDR = "B+GDR"
    BASELINE_CRC = "B+CRC"
    PARALLEL_A = "parallel-A"
    PARALLEL_C = "parallel-C"
    PARALLEL_F = "parallel-F"

    @classmethod
    def parse(cls, value: str | Ablation) -> Ablation:
        if isinstance(value, Ablation):
            return value
        if value == "parallel-IPF":
            return cls.FULL
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(a.value for a in cls)
            raise ConfigError(f"Unknown ablation '{value}' (choose from {choices})") from None

    @property
    def uses_gdr(self) -> bool:
        return self not in (Ablation.BASELINE, Ablation.BASELINE_CRC)

    @property
    def uses_crc(self) -> bool:
        return self not in (Ablation.BASELINE, Ablation.BASELINE_GDR)

    @property
    def fusion(self) -> str:
        return {
            Ablation.PARALLEL_A: "add",
            Ablation.PARALLEL_C: "concat",
            Ablation.PARALLEL_F: "attention",
        }.get(self, "ipf")


@dataclass
class BackboneConfig:
    """Encoder choice. ``tiny`` is a small random-init network for desk-scale runs."""

    name: str = "resnet50"
    width: int = 8
    depth: int = 1
    pretrained_path: str | None = None

    def __post_init__(self) -> None:
        if self.name not in ("resnet50", "tiny"):
            raise ConfigError(f"Unknown backbone '{self.name}' (choose from resnet50, tiny)")
        if self.width <= 0 or self.depth <= 0:
            raise ConfigError("Backbone width and depth must be positive")

    def level_channels(self) -> tuple[int, int, int, int]:
        """Channel counts of encoder levels 2..5."""
        if self.name == "resnet50":
            return (256, 512, 1024, 2048)
        return (self.width, self.width * 2, self.width * 4, self.width * 8)


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decoder_width: int = 128
    dyn_kernel_size: int = 3
    input_size: tuple[int, int] = (384, 384)
    lambda1: float = 0.6
    lambda2: float = 0.4
    ablation: Ablation = Ablation.FULL

    def __post_init__(self) -> None:
        self.input_size = tuple(self.input_size)  # type: ignore[assignment]
        self.ablation = Ablation.parse(self.ablation)
        if len(self.input_size) != 2:
            raise ConfigError(f"input_size must be (H, W), got {self.input_size}")
        for axis, size in zip(("height", "width"), self.input_size):
            if size <= 0 or size % 32 != 0:
                raise ConfigError(f"input_size {axis} {size} is not a positive multiple of 32")
        if self.decoder_width <= 0:
            raise ConfigError("decoder_width must be positive")
        if self.decoder_width % 4 != 0:
            raise ConfigError("decoder_width must be divisible by 4 (dense growth, SE reduction)")
        if self.dyn_kernel_size <= 0 or self.dyn_kernel_size % 2 == 0:
            raise ConfigError(f"dyn_kernel_size must be odd, got {self.dyn_kernel_size}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("Loss weights must be non-negative")


@dataclass
class DataConfig:
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)
    flow_encoding: str = "middlebury"
    num_workers: int = 0

    def __post_init__(self) -> None:
        self.mean = tuple(self.mean)  # type: ignore[assignment]
        self.std = tuple(self.std)  # type: ignore[assignment]
        self.scales = tuple(self.scales)
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("mean and std need three channel values")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std values must be positive")
        if self.flow_encoding != "middlebury":
            raise ConfigError(f"Unknown flow encoding '{self.flow_encoding}'")


@dataclass
class TrainStageSpec:
    """One stage of the stage-wise protocol: 1 spatial pretrain, 2 temporal, 3 joint."""

    stage: int = 3
    dataset_root: str | None = None
    batch_size: int = 8
    lr: float = 0.0002
    lr_decay_factor: float = 0.1
    lr_decay_period: int = 10
    max_epochs: int = 20
    max_steps: int | None = None
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    augment: bool = True
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 0
    spatial_checkpoint: str | None = None
    temporal_checkpoint: str | None = None
    from_scratch: bool = False

    def __post_init__(self) -> None:
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.lr_decay_period <= 0:
            raise ConfigError("lr_decay_period must be positive")

    @classmethod
    def defaults(cls, stage: int) -> TrainStageSpec:
        if stage in (1, 2):
            return cls(stage=stage, batch_size=16, lr=0.002, max_epochs=30)
        return cls(stage=stage)


@dataclass
class PSNetConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stages: dict[int, TrainStageSpec] = field(
        default_factory=lambda: {s: TrainStageSpec.defaults(s) for s in (1, 2, 3)}
    )

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> PSNetConfig:
        _reject_unknown(raw, {"model", "data", "stages"}, "config")
        model_raw = dict(raw.get("model") or {})
        backbone = _build(BackboneConfig, model_raw.pop("backbone", None) or {}, "model.backbone")
        model = _build(ModelConfig, model_raw, "model", backbone=backbone)
        data = _build(DataConfig, raw.get("data") or {}, "data")

        stages = {s: TrainStageSpec.defaults(s) for s in (1, 2, 3)}
        for key, section in (raw.get("stages") or {}).items():
            try:
                stage = int(key)
            except (TypeError, ValueError):
                raise ConfigError(f"Stage keys must be 1, 2 or 3, got '{key}'") from None
            merged = {**dataclasses.asdict(TrainStageSpec.defaults(stage)), **(section or {})}
            merged["stage"] = stage
            stages[stage] = _build(TrainStageSpec, merged, f"stages.{stage}")

        config = cls(model=model, data=data, stages=stages)
        config.apply_env()
        return config

    def apply_env(self) -> None:
        """Apply the seed override from the environment, if set."""
        seed = os.environ.get(SEED_ENV_VAR)
        if seed is None:
            return
        try:
            value = int(seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{seed}'") from None
        for spec in self.stages.values():
            spec.seed = value

    def to_dict(self) -> dict[str, Any]:
        model = dataclasses.asdict(self.model)
        model["ablation"] = self.model.ablation.value
        model["input_size"] = list(self.model.input_size)
        data = dataclasses.asdict(self.data)
        for key in ("mean", "std", "scales"):
            data[key] = list(data[key])
        return {
            "model": model,
            "data": data,
            "stages": {s: dataclasses.asdict(spec) for s, spec in sorted(self.stages.items())},
        }


def load_config(path: str | Path) -> PSNetConfig:
    """Read a YAML config file. Missing sections fall back to defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at the top level")
    return PSNetConfig.from_dict(raw)


def save_config(config: PSNetConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def tiny_config(
    size: int = 64, decoder_width: int = 16, ablation: Ablation | str = Ablation.FULL
) -> PSNetConfig:
    """Small random-init configuration used for desk-scale runs and tests."""
    model = ModelConfig(
        backbone=BackboneConfig(name="tiny", width=8, depth=1),
        decoder_width=decoder_width,
        input_size=(size, size),
        ablation=Ablation.parse(ablation),
    )
    stages = {s: TrainStageSpec.defaults(s) for s in (1, 2, 3)}
    for spec in stages.values():
        spec.batch_size = 4
        spec.lr = 1e-3
    return PSNetConfig(model=model, stages=stages)


def _reject_unknown(raw: dict[str, Any], known: set[str], section: str) -> None:
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section}: {', '.join(sorted(map(str, unknown)))}")


def _build(cls: type, raw: dict[str, Any], section: str, **overrides: Any) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{section}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    _reject_unknown(raw, names, section)
    try:
        return cls(**{**raw, **overrides})
    except TypeError as e:
        raise ConfigError(f"Invalid values in {section}: {e}") from e
