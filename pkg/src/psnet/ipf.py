"""Importance perception fusion of the appearance- and motion-dominated branches."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .exceptions import ConfigError, InputShapeError
from .layers import MaskHead, conv1x1, mask_sigmoid

FUSION_MODES = ("ipf", "add", "concat", "attention")


@dataclass
class FusionOutput:
    pre_s: Tensor
    f_imp: Tensor
    f_c: Tensor
    s_a: Tensor
    s_m: Tensor
    weight: Tensor | None = None


class ImportanceWeight(nn.Module):
    """Channel-wise weight in (0, 1) from pooled level-5 features of both streams."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(2 * channels, channels)

    def forward(self, f5_a: Tensor, f5_m: Tensor) -> Tensor:
        pooled = torch.cat([self.pool(f5_a).flatten(1), self.pool(f5_m).flatten(1)], dim=1)
        return mask_sigmoid(self.fc(pooled))


class AttentionWeight(nn.Module):
    """Channel weight learned from the decoder outputs themselves."""

    def __init__(self, channels: int, reduction: int = 4) -> None:
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Sequential(
            nn.Linear(2 * channels, channels // reduction),
            nn.ReLU(inplace=True),
            nn.Linear(channels // reduction, channels),
        )

    def forward(self, f2_a: Tensor, f2_m: Tensor) -> Tensor:
        return mask_sigmoid(self.fc(self.pool(torch.cat([f2_a, f2_m], dim=1)).flatten(1)))


def convex_combine(f2_a: Tensor, f2_m: Tensor, weight: Tensor) -> Tensor:
    w = weight.view(weight.shape[0], -1, 1, 1)
    return w * f2_a + (1 - w) * f2_m


class ImportancePerceptionFusion(nn.Module):
    def __init__(self, channels: int, mode: str = "ipf") -> None:
        super().__init__()
        if mode not in FUSION_MODES:
            raise ConfigError(f"Unknown fusion mode '{mode}'")
        self.channels = channels
        self.mode = mode
        if mode == "ipf":
            self.importance = ImportanceWeight(channels)
        elif mode == "attention":
            self.importance = AttentionWeight(channels)
        elif mode == "concat":
            self.merge = conv1x1(2 * channels, channels)
        self.head = MaskHead(2 * channels, channels)

    def importance_weight(self, f5_a: Tensor, f5_m: Tensor) -> Tensor:
        return self.importance(f5_a, f5_m)

    def fuse_features(
        self, f2_a: Tensor, f2_m: Tensor, weight: Tensor | None = None
    ) -> Tensor:
        if self.mode == "add":
            return f2_a + f2_m
        if self.mode == "concat":
            return self.merge(torch.cat([f2_a, f2_m], dim=1))
        if weight is None:
            raise ConfigError(f"Fusion mode '{self.mode}' needs an importance weight")
        return convex_combine(f2_a, f2_m, weight)

    def ipf_fuse(
        self, f2_a: Tensor, f2_m: Tensor, weight: Tensor | None = None
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Return (pre_s, f_imp, f_c)."""
        if f2_a.shape != f2_m.shape:
            raise InputShapeError(
                f"Branch decoder outputs differ: {tuple(f2_a.shape)} vs {tuple(f2_m.shape)}"
            )
        if f2_a.shape[1] != self.channels:
            raise InputShapeError(f"Expected {self.channels} channels, got {f2_a.shape[1]}")
        if weight is not None and weight.shape != f2_a.shape[:2]:
            raise InputShapeError(
                f"Weight {tuple(weight.shape)} does not match features {tuple(f2_a.shape[:2])}"
            )
        f_imp = self.fuse_features(f2_a, f2_m, weight)
        f_c = f2_a * f2_m
        pre_s = self.head(torch.cat([f_c, f_imp], dim=1))
        return pre_s, f_imp, f_c

    def forward(
        self, f2_a: Tensor, f2_m: Tensor, f5_a: Tensor, f5_m: Tensor, s_a: Tensor, s_m: Tensor
    ) -> FusionOutput:
        weight = None
        if self.mode == "ipf":
            weight = self.importance_weight(f5_a, f5_m)
        elif self.mode == "attention":
            weight = self.importance(f2_a, f2_m)
        pre_s, f_imp, f_c = self.ipf_fuse(f2_a, f2_m, weight)
        return FusionOutput(pre_s=pre_s, f_imp=f_imp, f_c=f_c, s_a=s_a, s_m=s_m, weight=weight)


class BranchHead(MaskHead):
    """Per-branch saliency prediction from level-2 decoder features."""

    def __init__(self, channels: int) -> None:
        super().__init__(channels, channels)
