"""Cross-modality refinement and complement decoder blocks."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import ContractError, InputShapeError
from .layers import (
    ChannelAttention,
    DenseBlock,
    MaskHead,
    conv1x1,
    conv3x3,
    mask_sigmoid,
    resize_to,
)

DILATIONS = (1, 3, 5)


@dataclass
class CrcLevelOutput:
    importance_mask: Tensor
    decoder_features: Tensor
    refinement_mask: Tensor | None = None


def dynamic_depthwise_conv(x: Tensor, kernels: Tensor, dilation: int = 1) -> Tensor:
    """Convolve every sample and channel of ``x`` with its own kernel.

    ``kernels`` has shape (N, C, k, k). Output keeps the spatial size.
    """
    n, c, h, w = x.shape
    if kernels.shape[:2] != (n, c) or kernels.shape[-1] != kernels.shape[-2]:
        raise InputShapeError(
            f"Kernels {tuple(kernels.shape)} do not match features {tuple(x.shape)}"
        )
    k = kernels.shape[-1]
    out = F.conv2d(
        x.reshape(1, n * c, h, w),
        kernels.reshape(n * c, 1, k, k),
        padding=dilation * (k - 1) // 2,
        dilation=dilation,
        groups=n * c,
    )
    return out.reshape(n, c, h, w)


class FilterGenerator(nn.Module):
    """Two convolutions and global pooling reshaped into per-sample depthwise kernels."""

    def __init__(self, channels: int, kernel_size: int, dilation: int) -> None:
        super().__init__()
        if kernel_size % 2 == 0 or dilation < 1 or (dilation * (kernel_size - 1)) % 2:
            raise ContractError(
                f"Kernel size {kernel_size} with dilation {dilation} cannot keep the spatial size"
            )
        self.channels = channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.conv1 = conv3x3(channels, channels)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = conv1x1(channels, channels * kernel_size * kernel_size)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, guide: Tensor) -> Tensor:
        k = self.kernel_size
        weights = self.pool(self.conv2(self.relu(self.conv1(guide))))
        return weights.reshape(guide.shape[0], self.channels, k, k)

    def apply(self, x: Tensor, kernels: Tensor) -> Tensor:
        return dynamic_depthwise_conv(x, kernels, self.dilation)


class _DecoderBlock(nn.Module):
    """Shared level bookkeeping: fuse with the previous decoder level or, at level 5,
    with the reinforced dominant features."""

    def __init__(self, channels: int, level: int) -> None:
        super().__init__()
        self.channels = channels
        self.level = level
        self.importance = MaskHead(channels, channels, last_kernel=1)
        self.decode = conv3x3(2 * channels, channels)

    def importance_mask(self, f_dom_r: Tensor) -> Tensor:
        return self.importance(f_dom_r)

    def _decode(self, f_rc: Tensor, f_dom_r: Tensor, f_prev: Tensor | None) -> Tensor:
        if self.level == 5:
            if f_prev is not None:
                raise ContractError("Level 5 has no previous decoder features")
            return self.decode(torch.cat([f_rc, f_dom_r], dim=1))
        if f_prev is None:
            raise ContractError(f"Level {self.level} needs the level-{self.level + 1} decoder output")
        up = resize_to(f_prev, tuple(f_rc.shape[-2:]))
        return self.decode(torch.cat([f_rc, up], dim=1))


class CrcBlock(_DecoderBlock):
    def __init__(self, channels: int, level: int, kernel_size: int = 3) -> None:
        super().__init__(channels, level)
        self.dense = DenseBlock(channels, growth=channels // 4, num_layers=3)
        self.complement = conv1x1(channels, channels)
        self.generators = nn.ModuleList(
            FilterGenerator(channels, kernel_size, d) for d in DILATIONS
        )
        self.dy_fuse = conv3x3(len(DILATIONS) * channels, channels)
        self.refine_conv = nn.Conv2d(2, 1, 3, padding=1)
        self.ca_aux = ChannelAttention(channels, channels)
        self.ca_ref = ChannelAttention(channels, channels)

    def complement_aux(self, f_aux: Tensor, mask_s: Tensor) -> Tensor:
        f_waux = mask_s * f_aux
        return self.complement(self.dense(f_waux) + f_waux)

    def generate_kernels(self, f_caux: Tensor) -> list[Tensor]:
        return [gen(f_caux) for gen in self.generators]

    def dynamic_refine(
        self, f_caux: Tensor, f_dom_r: Tensor, kernels: list[Tensor] | None = None
    ) -> Tensor:
        if f_caux.shape != f_dom_r.shape:
            raise InputShapeError(
                f"Auxiliary {tuple(f_caux.shape)} and dominant {tuple(f_dom_r.shape)} differ"
            )
        if kernels is None:
            kernels = self.generate_kernels(f_caux)
        responses = [gen.apply(f_dom_r, k) for gen, k in zip(self.generators, kernels)]
        return self.dy_fuse(torch.cat(responses, dim=1))

    def refine_mask(self, f_dy: Tensor) -> Tensor:
        pooled = torch.cat(
            [f_dy.amax(dim=1, keepdim=True), f_dy.mean(dim=1, keepdim=True)], dim=1
        )
        return mask_sigmoid(self.refine_conv(pooled))

    def refine_dominant(self, f_dy: Tensor, f_dom: Tensor) -> tuple[Tensor, Tensor]:
        mask_r = self.refine_mask(f_dy)
        return mask_r * f_dom, mask_r

    def forward(
        self, f_dom: Tensor, f_aux: Tensor, f_dom_r: Tensor, f_prev: Tensor | None = None
    ) -> CrcLevelOutput:
        mask_s = self.importance_mask(f_dom_r)
        f_caux = self.complement_aux(f_aux, mask_s)
        f_dy = self.dynamic_refine(f_caux, f_dom_r)
        f_ref, mask_r = self.refine_dominant(f_dy, f_dom)
        f_rc = self.ca_aux(f_caux) + self.ca_ref(f_ref)
        return CrcLevelOutput(
            importance_mask=mask_s,
            decoder_features=self._decode(f_rc, f_dom_r, f_prev),
            refinement_mask=mask_r,
        )


class BaselineBlock(_DecoderBlock):
    """Decoder level without refinement: importance-weighted auxiliary features
    concatenated with the dominant features."""

    def __init__(self, channels: int, level: int) -> None:
        super().__init__(channels, level)
        self.merge = conv3x3(2 * channels, channels)

    def forward(
        self, f_dom: Tensor, f_aux: Tensor, f_dom_r: Tensor, f_prev: Tensor | None = None
    ) -> CrcLevelOutput:
        mask_s = self.importance_mask(f_dom_r)
        merged = self.merge(torch.cat([mask_s * f_aux, f_dom_r], dim=1))
        return CrcLevelOutput(
            importance_mask=mask_s, decoder_features=self._decode(merged, f_dom_r, f_prev)
        )
