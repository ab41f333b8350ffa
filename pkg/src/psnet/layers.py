"""Building blocks shared by the GDR, CRC and fusion modules."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

# float32 sigmoid rounds to 1.0 for logits above about 17
MASK_EPS = 1e-6


def mask_sigmoid(x: Tensor) -> Tensor:
    """Sigmoid clamped to [MASK_EPS, 1 - MASK_EPS], so masks stay inside (0, 1)."""
    return torch.sigmoid(x).clamp(MASK_EPS, 1 - MASK_EPS)


def conv3x3(in_channels: int, out_channels: int, stride: int = 1, dilation: int = 1) -> nn.Conv2d:
    return nn.Conv2d(
        in_channels, out_channels, 3, stride=stride, padding=dilation, dilation=dilation
    )


def conv1x1(in_channels: int, out_channels: int) -> nn.Conv2d:
    return nn.Conv2d(in_channels, out_channels, 1)


def resize_to(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize; a no-op when the size already matches."""
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class ConvBNReLU(nn.Module):
    def __init__(
        self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1
    ) -> None:
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride,
            padding=kernel_size // 2, bias=False,
        )
        self.bn = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.relu(self.bn(self.conv(x)))


class MaskHead(nn.Module):
    """sigmoid(conv(conv(x))) reduced to one channel.

    The second convolution is 3x3 for the saliency heads and 1x1 for the
    importance response map.
    """

    def __init__(self, in_channels: int, mid_channels: int, last_kernel: int = 3) -> None:
        super().__init__()
        self.conv1 = conv3x3(in_channels, mid_channels)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(mid_channels, 1, last_kernel, padding=last_kernel // 2)

    def logits(self, x: Tensor) -> Tensor:
        return self.conv2(self.relu(self.conv1(x)))

    def forward(self, x: Tensor) -> Tensor:
        return mask_sigmoid(self.logits(x))


class ChannelAttention(nn.Module):
    """1x1 channel compaction followed by squeeze-excitation gating."""

    def __init__(self, in_channels: int, channels: int, reduction: int = 4) -> None:
        super().__init__()
        self.compact = conv1x1(in_channels, channels)
        self.avg_pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Sequential(
            nn.Linear(channels, max(channels // reduction, 1)),
            nn.ReLU(inplace=True),
            nn.Linear(max(channels // reduction, 1), channels),
            nn.Sigmoid(),
        )

    def forward(self, x: Tensor) -> Tensor:
        x = self.compact(x)
        b, c, _, _ = x.shape
        gate = self.fc(self.avg_pool(x).view(b, c)).view(b, c, 1, 1)
        return x * gate


class DenseBlock(nn.Module):
    """Densely connected conv layers with a 1x1 transition back to the input width."""

    def __init__(self, channels: int, growth: int, num_layers: int = 3) -> None:
        super().__init__()
        self.layers = nn.ModuleList()
        width = channels
        for _ in range(num_layers):
            self.layers.append(
                nn.Sequential(
                    nn.BatchNorm2d(width),
                    nn.ReLU(inplace=True),
                    conv3x3(width, growth),
                )
            )
            width += growth
        self.transition = conv1x1(width, channels)

    def forward(self, x: Tensor) -> Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer(torch.cat(features, dim=1)))
        return self.transition(torch.cat(features, dim=1))
