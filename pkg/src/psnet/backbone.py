from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import torch
from torch import Tensor, nn
from torchvision.models import resnet50

from .config import BackboneConfig
from .exceptions import ConfigError, InputShapeError
from .layers import ConvBNReLU

logger = logging.getLogger(__name__)

# Level 1 is computed by every encoder but never kept.
LEVELS = (2, 3, 4, 5)


class Branch(str, Enum):
    APPEARANCE = "appearance"
    MOTION = "motion"

    @property
    def other(self) -> Branch:
        return Branch.MOTION if self is Branch.APPEARANCE else Branch.APPEARANCE


@dataclass
class FeaturePyramid:
    """Encoder features for levels 2..5 (strides 4..32) of one stream."""

    levels: dict[int, Tensor]
    branch: Branch
    projected: bool = False

    def __post_init__(self) -> None:
        if tuple(sorted(self.levels)) != LEVELS:
            raise InputShapeError(
                f"Feature pyramid needs levels {LEVELS}, got {tuple(sorted(self.levels))}"
            )

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]

    def spatial_size(self, level: int) -> tuple[int, int]:
        h, w = self.levels[level].shape[-2:]
        return int(h), int(w)

    def channels(self) -> tuple[int, ...]:
        return tuple(int(self.levels[i].shape[1]) for i in LEVELS)

    def check_strides(self, input_size: tuple[int, int]) -> None:
        for i in LEVELS:
            expected = (input_size[0] >> i, input_size[1] >> i)
            if self.spatial_size(i) != expected:
                raise InputShapeError(
                    f"Level {i} of the {self.branch.value} pyramid is {self.spatial_size(i)}, "
                    f"expected {expected}"
                )


def check_input_size(height: int, width: int) -> None:
    for axis, size in (("height", height), ("width", width)):
        if size % 32 != 0:
            raise InputShapeError(f"Input {axis} {size} is not divisible by 32")


class ResNetEncoder(nn.Module):
    """ResNet-50 without its pooling head, returning levels 1..5."""

    def __init__(self, pretrained_path: str | None = None) -> None:
        super().__init__()
        net = resnet50(weights=None)
        if pretrained_path is not None and Path(pretrained_path).is_file():
            state = torch.load(pretrained_path, map_location="cpu", weights_only=True)
            missing, _ = net.load_state_dict(state, strict=False)
            if missing:
                logger.warning("Pretrained weights %s miss %d keys", pretrained_path, len(missing))
        else:
            logger.warning(
                "Pretrained backbone weights not found at %s; using random init", pretrained_path
            )
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4

    def forward(self, x: Tensor) -> dict[int, Tensor]:
        f1 = self.stem(x)
        f2 = self.layer1(self.pool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return {1: f1, 2: f2, 3: f3, 4: f4, 5: f5}


class TinyEncoder(nn.Module):
    """Stride-2 stem then four stride-2 stages, doubling width per stage."""

    def __init__(self, width: int = 8, depth: int = 1) -> None:
        super().__init__()
        self.stem = ConvBNReLU(3, max(width // 2, 1), stride=2)
        stages = []
        in_ch = max(width // 2, 1)
        for k in range(4):
            out_ch = width * 2**k
            blocks = [ConvBNReLU(in_ch, out_ch, stride=2)]
            blocks += [ConvBNReLU(out_ch, out_ch) for _ in range(depth - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    def forward(self, x: Tensor) -> dict[int, Tensor]:
        out = {1: self.stem(x)}
        x = out[1]
        for level, stage in zip(LEVELS, self.stages):
            x = stage(x)
            out[level] = x
        return out


def build_encoder(cfg: BackboneConfig) -> nn.Module:
    if cfg.name == "resnet50":
        return ResNetEncoder(cfg.pretrained_path)
    if cfg.name == "tiny":
        return TinyEncoder(cfg.width, cfg.depth)
    raise ConfigError(f"Unknown backbone '{cfg.name}'")


class DualStreamEncoder(nn.Module):
    """Appearance and motion encoders with independent parameters."""

    def __init__(self, cfg: BackboneConfig) -> None:
        super().__init__()
        self.appearance = build_encoder(cfg)
        self.motion = build_encoder(cfg)

    def encoder(self, branch: Branch) -> nn.Module:
        return self.appearance if branch is Branch.APPEARANCE else self.motion

    def encode(self, image: Tensor, branch: Branch) -> FeaturePyramid:
        """Run one stream and keep levels 2..5."""
        if image.dim() != 4 or image.shape[1] != 3:
            raise InputShapeError(f"Expected a (N, 3, H, W) image batch, got {tuple(image.shape)}")
        h, w = int(image.shape[2]), int(image.shape[3])
        check_input_size(h, w)
        feats = self.encoder(branch)(image)
        pyramid = FeaturePyramid({i: feats[i] for i in LEVELS}, branch)
        pyramid.check_strides((h, w))
        return pyramid


class PyramidProjection(nn.Module):
    """Per-level 1x1 conv + BN + ReLU mapping every level to the decoder width."""

    def __init__(self, in_channels: tuple[int, ...], out_channels: int) -> None:
        super().__init__()
        self.out_channels = out_channels
        self.in_channels = tuple(in_channels)
        self.proj = nn.ModuleDict(
            {str(i): ConvBNReLU(c, out_channels, kernel_size=1) for i, c in zip(LEVELS, in_channels)}
        )

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        if pyramid.channels() != self.in_channels:
            raise InputShapeError(
                f"Projection expects channels {self.in_channels}, got {pyramid.channels()}"
            )
        levels = {i: self.proj[str(i)](pyramid[i]) for i in LEVELS}
        return FeaturePyramid(levels, pyramid.branch, projected=True)
