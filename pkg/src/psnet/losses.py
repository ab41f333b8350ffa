"""Training objective: BCE + SSIM saliency loss with side-output supervision."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import torch
import torch.nn.functional as F
from torch import Tensor
from torchmetrics.functional.image import structural_similarity_index_measure

from .backbone import LEVELS
from .exceptions import ContractError, InputShapeError, NonFiniteLossError
from .layers import resize_to

if TYPE_CHECKING:
    from .network import PSNetOutput, StreamOutput

EPS = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class LossBundle:
    l_sal_final: Tensor
    l_appearance: Tensor
    l_motion: Tensor
    l_total: Tensor
    terms: dict[str, float] = field(default_factory=dict)

    def log_fields(self) -> str:
        """Sorted key=value pairs for the per-step training record."""
        parts = [f"l_total={self.l_total.item():.6g}"]
        parts += [f"{name}={value:.6g}" for name, value in sorted(self.terms.items())]
        return " ".join(parts)


def _check_same_shape(pred: Tensor, gt: Tensor, name: str) -> None:
    if pred.shape != gt.shape:
        raise InputShapeError(
            f"{name}: prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ"
        )


def bce_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [EPS, 1 - EPS].

    NaN predictions propagate to the result.
    """
    _check_same_shape(pred, gt, "bce_loss")
    p = pred.clamp(EPS, 1 - EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log1p(-p)).mean()


def _reflect_pad(x: Tensor, pad: int) -> Tensor:
    """Reflect the last two dims by ``pad`` pixels, for maps of any size."""

    def index(n: int) -> Tensor:
        idx = torch.arange(-pad, n + pad, device=x.device)
        if n == 1:
            return torch.zeros_like(idx)
        period = 2 * (n - 1)
        idx = idx.remainder(period)
        return torch.where(idx >= n, period - idx, idx)

    h, w = x.shape[-2:]
    return x.index_select(-2, index(h)).index_select(-1, index(w))


def ssim_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """1 - SSIM with an 11x11 Gaussian window on the [0, 1] range.

    Maps at least as large as the window are averaged over valid window
    positions. Smaller maps are reflection-padded by half a window, so every
    original pixel gets a full window and the mean runs over those pixels.
    """
    _check_same_shape(pred, gt, "ssim_loss")
    if pred.dim() != 4 or pred.shape[1] != 1:
        raise InputShapeError(f"ssim_loss expects (N, 1, H, W) maps, got {tuple(pred.shape)}")
    if min(pred.shape[-2:]) < SSIM_WINDOW:
        pred = _reflect_pad(pred, SSIM_WINDOW // 2)
        gt = _reflect_pad(gt, SSIM_WINDOW // 2)
    ssim = structural_similarity_index_measure(
        pred,
        gt,
        gaussian_kernel=True,
        sigma=SSIM_SIGMA,
        kernel_size=SSIM_WINDOW,
        data_range=1.0,
        k1=0.01,
        k2=0.03,
    )
    return 1 - ssim


def saliency_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return bce_loss(pred, gt) + ssim_loss(pred, gt)


def downsample_gt(gt: Tensor, size: tuple[int, int]) -> Tensor:
    """Area-downsample a binary mask and re-binarize at 0.5."""
    if tuple(gt.shape[-2:]) == tuple(size):
        return gt
    return (F.interpolate(gt, size=size, mode="area") >= 0.5).to(gt.dtype)


def _side_bce(mask: Tensor, gt: Tensor) -> Tensor:
    target = downsample_gt(gt, tuple(mask.shape[-2:]))
    if target.shape[-2:] != mask.shape[-2:]:
        raise InputShapeError(f"Supervision target {tuple(target.shape)} != {tuple(mask.shape)}")
    return bce_loss(mask, target)


def _branch_terms(
    s_branch: Tensor,
    mask5: Tensor | None,
    masks_s: dict[int, Tensor],
    gt: Tensor,
    lambda1: float,
    lambda2: float,
    prefix: str,
) -> tuple[Tensor, dict[str, Tensor]]:
    missing = [i for i in LEVELS if i not in masks_s]
    if missing:
        raise ContractError(f"{prefix}: missing importance masks for levels {missing}")
    terms = {f"{prefix}.sal": saliency_loss(resize_to(s_branch, tuple(gt.shape[-2:])), gt)}
    if mask5 is not None:
        terms[f"{prefix}.mask5"] = lambda1 * _side_bce(mask5, gt)
    for i in LEVELS:
        terms[f"{prefix}.mask_s{i}"] = lambda2 * _side_bce(masks_s[i], gt)
    return sum(terms.values()), terms


def branch_loss(
    s_branch: Tensor,
    mask5: Tensor | None,
    masks_s: dict[int, Tensor],
    gt: Tensor,
    lambda1: float = 0.6,
    lambda2: float = 0.4,
) -> Tensor:
    """Saliency loss of one branch plus weighted side-output BCE terms.

    ``mask5`` is None for variants without the GDR module.
    """
    total, _ = _branch_terms(s_branch, mask5, masks_s, gt, lambda1, lambda2, "branch")
    return total


def _check_finite(terms: dict[str, Tensor]) -> None:
    for name, value in terms.items():
        if not math.isfinite(value.item()):
            raise NonFiniteLossError(name)


def total_loss(
    output: PSNetOutput, gt: Tensor, lambda1: float = 0.6, lambda2: float = 0.4
) -> LossBundle:
    """Final saliency loss plus both branch losses for a ``PSNetOutput``."""
    pre_s = resize_to(output.fusion.pre_s, tuple(gt.shape[-2:]))
    l_sal = saliency_loss(pre_s, gt)
    terms: dict[str, Tensor] = {"sal_final": l_sal}
    branch_totals = {}
    for name, branch in (("appearance", output.appearance), ("motion", output.motion)):
        mask5 = branch.gdr.mask5 if branch.gdr is not None else None
        value, parts = _branch_terms(
            branch.saliency, mask5, branch.importance_masks, gt, lambda1, lambda2, name
        )
        terms.update(parts)
        branch_totals[name] = value
    _check_finite(terms)
    l_total = l_sal + branch_totals["appearance"] + branch_totals["motion"]
    return LossBundle(
        l_sal_final=l_sal,
        l_appearance=branch_totals["appearance"],
        l_motion=branch_totals["motion"],
        l_total=l_total,
        terms={k: v.item() for k, v in terms.items()},
    )


def stream_loss(
    output: StreamOutput, gt: Tensor, branch: str, lambda1: float = 0.6
) -> LossBundle:
    """Pretraining loss of a single-stream network, booked under its branch."""
    terms = {f"{branch}.sal": saliency_loss(output.saliency, gt)}
    if output.gdr is not None:
        terms[f"{branch}.mask5"] = lambda1 * _side_bce(output.gdr.mask5, gt)
    _check_finite(terms)
    value = sum(terms.values())
    zero = torch.zeros((), dtype=value.dtype, device=value.device)
    return LossBundle(
        l_sal_final=zero,
        l_appearance=value if branch == "appearance" else zero,
        l_motion=value if branch == "motion" else zero,
        l_total=value,
        terms={k: v.item() for k, v in terms.items()},
    )
