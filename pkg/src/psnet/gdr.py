"""Gather diffusion reinforcement.

A coarse semantic mask from level 5 filters every level, the filtered
levels are fused top-down then bottom-up, concatenated at level-2
resolution, and the fused map is diffused back to one reinforced feature
per level.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbone import LEVELS, FeaturePyramid
from .exceptions import ContractError, InputShapeError
from .layers import MaskHead, conv1x1, conv3x3, resize_to


@dataclass
class GdrOutput:
    mask5: Tensor
    fused: Tensor
    reinforced: dict[int, Tensor]


class GatherDiffusion(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.channels = channels
        self.mask_head = MaskHead(channels, channels)
        self.lateral = nn.ModuleDict({str(i): conv1x1(channels, channels) for i in LEVELS})
        self.top_down = nn.ModuleDict({str(i): conv3x3(channels, channels) for i in LEVELS})
        self.bottom_up = nn.ModuleDict({str(i): conv3x3(channels, channels) for i in LEVELS})
        self.fuse = conv3x3(len(LEVELS) * channels, channels)
        self.spread = nn.ModuleDict(
            {str(i): conv3x3(channels, channels, stride=1 if i == 2 else 2) for i in LEVELS}
        )

    def semantic_mask(self, f5: Tensor) -> Tensor:
        return self.mask_head(f5)

    def filter_levels(self, pyramid: FeaturePyramid, mask5: Tensor) -> dict[int, Tensor]:
        """Weight each level by the semantic mask resized to that level."""
        return {i: resize_to(mask5, pyramid.spatial_size(i)) * pyramid[i] for i in LEVELS}

    def gather(self, pyramid: FeaturePyramid, mask5: Tensor) -> Tensor:
        if not pyramid.projected:
            raise ContractError("gather needs a projected feature pyramid")
        filtered = self.filter_levels(pyramid, mask5)

        y: dict[int, Tensor] = {}
        for i in reversed(LEVELS):
            lateral = self.lateral[str(i)](filtered[i])
            if i < 5:
                lateral = lateral + resize_to(y[i + 1], pyramid.spatial_size(i))
            y[i] = self.top_down[str(i)](lateral)

        y_rev: dict[int, Tensor] = {}
        for i in LEVELS:
            x = y[i]
            if i > 2:
                x = x + F.avg_pool2d(y_rev[i - 1], kernel_size=2, stride=2)
            y_rev[i] = self.bottom_up[str(i)](x)

        size2 = pyramid.spatial_size(2)
        stacked = torch.cat([resize_to(y_rev[i], size2) for i in LEVELS], dim=1)
        return self.fuse(stacked)

    def diffuse(self, fused: Tensor) -> dict[int, Tensor]:
        reinforced: dict[int, Tensor] = {}
        x = fused
        for i in LEVELS:
            x = self.spread[str(i)](x)
            reinforced[i] = x
        return reinforced

    def forward(self, pyramid: FeaturePyramid) -> GdrOutput:
        mask5 = self.semantic_mask(pyramid[5])
        fused = self.gather(pyramid, mask5)
        reinforced = self.diffuse(fused)
        for i in LEVELS:
            if tuple(reinforced[i].shape[-2:]) != pyramid.spatial_size(i):
                raise InputShapeError(
                    f"Reinforced level {i} has size {tuple(reinforced[i].shape[-2:])}, "
                    f"encoder level is {pyramid.spatial_size(i)}"
                )
        return GdrOutput(mask5=mask5, fused=fused, reinforced=reinforced)
