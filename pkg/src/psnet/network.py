from __future__ import annotations

from dataclasses import dataclass

from torch import Tensor, nn

from .backbone import (
    LEVELS,
    Branch,
    DualStreamEncoder,
    FeaturePyramid,
    PyramidProjection,
    build_encoder,
    check_input_size,
)
from .config import ModelConfig
from .crc import BaselineBlock, CrcBlock, CrcLevelOutput
from .exceptions import InputShapeError
from .gdr import GatherDiffusion, GdrOutput
from .ipf import BranchHead, FusionOutput, ImportancePerceptionFusion
from .layers import resize_to


@dataclass
class BranchOutput:
    saliency: Tensor
    levels: dict[int, CrcLevelOutput]
    gdr: GdrOutput | None = None

    @property
    def importance_masks(self) -> dict[int, Tensor]:
        return {i: out.importance_mask for i, out in self.levels.items()}

    @property
    def decoder_features(self) -> Tensor:
        return self.levels[2].decoder_features


@dataclass
class PSNetOutput:
    saliency: Tensor
    fusion: FusionOutput
    appearance: BranchOutput
    motion: BranchOutput

    def branch(self, branch: Branch) -> BranchOutput:
        return self.appearance if branch is Branch.APPEARANCE else self.motion


class DecoderBranch(nn.Module):
    """One dominant-modality decoding branch: GDR, four decoder levels, saliency head."""

    def __init__(self, cfg: ModelConfig, dominant: Branch) -> None:
        super().__init__()
        c = cfg.decoder_width
        self.dominant = dominant
        self.gdr = GatherDiffusion(c) if cfg.ablation.uses_gdr else None
        if cfg.ablation.uses_crc:
            blocks = {str(i): CrcBlock(c, i, cfg.dyn_kernel_size) for i in LEVELS}
        else:
            blocks = {str(i): BaselineBlock(c, i) for i in LEVELS}
        self.blocks = nn.ModuleDict(blocks)
        self.head = BranchHead(c)

    def forward(self, dom: FeaturePyramid, aux: FeaturePyramid) -> BranchOutput:
        gdr_out = self.gdr(dom) if self.gdr is not None else None
        reinforced = gdr_out.reinforced if gdr_out is not None else dom.levels
        levels: dict[int, CrcLevelOutput] = {}
        prev = None
        for i in reversed(LEVELS):
            levels[i] = self.blocks[str(i)](dom[i], aux[i], reinforced[i], prev)
            prev = levels[i].decoder_features
        return BranchOutput(saliency=self.head(prev), levels=levels, gdr=gdr_out)


class PSNet(nn.Module):
    """Parallel symmetric two-stream saliency network."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.cfg = cfg
        c = cfg.decoder_width
        level_channels = cfg.backbone.level_channels()
        self.encoders = DualStreamEncoder(cfg.backbone)
        self.projections = nn.ModuleDict(
            {b.value: PyramidProjection(level_channels, c) for b in Branch}
        )
        self.branches = nn.ModuleDict({b.value: DecoderBranch(cfg, b) for b in Branch})
        self.fusion = ImportancePerceptionFusion(c, cfg.ablation.fusion)

    def encode(self, rgb: Tensor, flow: Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        if rgb.shape != flow.shape:
            raise InputShapeError(
                f"RGB {tuple(rgb.shape)} and flow {tuple(flow.shape)} inputs differ in shape"
            )
        pyr_a = self.projections["appearance"](self.encoders.encode(rgb, Branch.APPEARANCE))
        pyr_m = self.projections["motion"](self.encoders.encode(flow, Branch.MOTION))
        return pyr_a, pyr_m

    def forward(self, rgb: Tensor, flow: Tensor) -> PSNetOutput:
        pyr_a, pyr_m = self.encode(rgb, flow)
        out_a = self.branches["appearance"](pyr_a, pyr_m)
        out_m = self.branches["motion"](pyr_m, pyr_a)
        fusion = self.fusion(
            out_a.decoder_features, out_m.decoder_features,
            pyr_a[5], pyr_m[5], out_a.saliency, out_m.saliency,
        )
        saliency = resize_to(fusion.pre_s, tuple(rgb.shape[-2:]))
        return PSNetOutput(saliency=saliency, fusion=fusion, appearance=out_a, motion=out_m)

    def stream_modules(self, branch: Branch) -> dict[str, nn.Module]:
        """Modules shared with a single-stream pretraining network, keyed by its names."""
        decoder = self.branches[branch.value]
        modules: dict[str, nn.Module] = {
            "encoder": self.encoders.encoder(branch),
            "projection": self.projections[branch.value],
            "head": decoder.head,
        }
        if decoder.gdr is not None:
            modules["gdr"] = decoder.gdr
        return modules


@dataclass
class StreamOutput:
    saliency: Tensor
    prediction: Tensor
    gdr: GdrOutput | None = None


class SingleStreamNet(nn.Module):
    """Encoder, GDR and a plain saliency head for per-stream pretraining."""

    def __init__(self, cfg: ModelConfig, branch: Branch) -> None:
        super().__init__()
        self.cfg = cfg
        self.branch = branch
        c = cfg.decoder_width
        self.encoder = build_encoder(cfg.backbone)
        self.projection = PyramidProjection(cfg.backbone.level_channels(), c)
        self.gdr = GatherDiffusion(c) if cfg.ablation.uses_gdr else None
        self.head = BranchHead(c)

    def forward(self, image: Tensor) -> StreamOutput:
        check_input_size(int(image.shape[-2]), int(image.shape[-1]))
        feats = self.encoder(image)
        pyramid = self.projection(FeaturePyramid({i: feats[i] for i in LEVELS}, self.branch))
        gdr_out = self.gdr(pyramid) if self.gdr is not None else None
        top = gdr_out.reinforced[2] if gdr_out is not None else pyramid[2]
        prediction = self.head(top)
        return StreamOutput(
            saliency=resize_to(prediction, tuple(image.shape[-2:])),
            prediction=prediction,
            gdr=gdr_out,
        )


def count_parameters(model: nn.Module) -> dict[str, int]:
    """Total parameter count plus a breakdown by top-level component."""
    counts = {"total": sum(p.numel() for p in model.parameters())}
    if isinstance(model, PSNet):
        counts["encoders"] = _numel(model.encoders)
        counts["projections"] = _numel(model.projections)
        counts["gdr"] = sum(_numel(b.gdr) for b in model.branches.values() if b.gdr is not None)
        counts["decoder_blocks"] = sum(_numel(b.blocks) for b in model.branches.values())
        counts["heads"] = sum(_numel(b.head) for b in model.branches.values())
        counts["fusion"] = _numel(model.fusion)
    return counts


def _numel(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
