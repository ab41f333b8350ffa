"""Inference over dataset trees, saliency overlays and speed measurement."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Iterable, Iterator
from pathlib import Path

import matplotlib
import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from .backbone import Branch
from .config import DataConfig, PSNetConfig
from .data import (
    VideoSample,
    VideoSequence,
    is_sequence_dir,
    load_dataset,
    load_pair,
    load_sequence,
    read_rgb,
    to_tensor,
    write_map,
    write_rgb,
)
from .exceptions import CheckpointError, DatasetError
from .layers import resize_to
from .metrics import IMAGE_SUFFIXES, find_image, read_map
from .network import PSNet, PSNetOutput, SingleStreamNet, StreamOutput
from .training import STAGE_BRANCH, Checkpoint, load_checkpoint, load_model

logger = logging.getLogger(__name__)


def _batch(sample: VideoSample, data: DataConfig, branch: Branch) -> torch.Tensor:
    image = sample.rgb if branch is Branch.APPEARANCE else sample.flow_rgb
    if image is None:
        raise DatasetError(f"{sample.sequence_id}/{sample.name}: missing {branch.value} input")
    return to_tensor(image, data.mean, data.std)[None]


@torch.no_grad()
def predict(
    model: nn.Module, sample: VideoSample, data: DataConfig
) -> PSNetOutput | StreamOutput:
    model.eval()
    if isinstance(model, PSNet):
        return model(_batch(sample, data, Branch.APPEARANCE), _batch(sample, data, Branch.MOTION))
    if isinstance(model, SingleStreamNet):
        return model(_batch(sample, data, model.branch))
    raise TypeError(f"Cannot run inference with {type(model).__name__}")


def predict_samples(
    model: nn.Module, samples: Iterable[VideoSample], data: DataConfig
) -> Iterator[tuple[VideoSample, np.ndarray]]:
    """Saliency maps in [0, 1] at each sample's original resolution."""
    for sample in samples:
        output = predict(model, sample, data)
        yield sample, to_map(output.saliency, sample.original_size or sample.size)


def to_map(saliency: torch.Tensor, size: tuple[int, int]) -> np.ndarray:
    return resize_to(saliency, tuple(size))[0, 0].clamp(0, 1).cpu().numpy()


def importance_stats(weight: torch.Tensor) -> dict[str, float | int]:
    return {
        "mean": float(weight.mean()),
        "min": float(weight.min()),
        "max": float(weight.max()),
        "channels": int(weight.shape[1]),
    }


def branch_output_root(output_root: Path, branch: Branch) -> Path:
    """Sibling directory for per-branch maps, so ``output_root`` stays evaluable."""
    return output_root.with_name(f"{output_root.name}-{branch.value}")


def load_inputs(
    source: str | Path | tuple[str | Path, str | Path],
    input_size: tuple[int, int] | None,
    require: tuple[str, ...],
) -> list[VideoSequence]:
    """A dataset root, one sequence directory, or an (rgb, flow) file pair."""
    if isinstance(source, tuple):
        return [load_pair(*source, input_size=input_size)]
    if is_sequence_dir(source):
        return [load_sequence(source, input_size=input_size, require=require)]
    return load_dataset(source, input_size=input_size, require=require)


def infer(
    checkpoint: str | Path | Checkpoint,
    input_root: str | Path | tuple[str | Path, str | Path],
    output_root: str | Path,
    dump_importance: bool = False,
    save_branches: bool = False,
    single_stream: bool = False,
    progress: bool = False,
) -> list[Path]:
    """Write one saliency PNG per frame pair under ``output_root/<sequence>/``.

    ``input_root`` may also be a single (rgb, flow) file pair, whose map is
    written to ``output_root/<rgb stem>.png``.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if ckpt.stage != 3 and not single_stream:
        raise CheckpointError(
            f"{ckpt.path} is a stage-{ckpt.stage} checkpoint; pass single_stream to use it"
        )
    config = PSNetConfig.from_dict(ckpt.config)
    model = load_model(ckpt, config)
    if ckpt.stage == 3:
        require: tuple[str, ...] = ("rgb", "flow")
    else:
        require = ("rgb",) if STAGE_BRANCH[ckpt.stage] is Branch.APPEARANCE else ("flow",)
    sequences = load_inputs(input_root, config.model.input_size, require)
    single_pair = isinstance(input_root, tuple)
    output_root = Path(output_root)
    written: list[Path] = []
    samples = [sample for seq in sequences for sample in seq]
    for sample in tqdm(samples, disable=not progress, desc="infer"):
        output = predict(model, sample, config.data)
        size = sample.original_size or sample.size
        seq_root = output_root if single_pair else output_root / sample.sequence_id
        path = seq_root / f"{sample.name}.png"
        write_map(to_map(output.saliency, size), path)
        written.append(path)
        if not isinstance(output, PSNetOutput):
            continue
        if save_branches:
            for branch in Branch:
                branch_path = branch_output_root(output_root, branch) / path.relative_to(output_root)
                write_map(to_map(output.branch(branch).saliency, size), branch_path)
        if dump_importance:
            weight = output.fusion.weight
            if weight is None:
                logger.warning("Fusion mode '%s' has no importance weight to dump",
                               model.fusion.mode)
                dump_importance = False
                continue
            stats = importance_stats(weight)
            path.with_suffix(".json").write_text(json.dumps(stats, indent=2), encoding="utf-8")
    logger.info("Wrote %d saliency maps to %s", len(written), output_root)
    return written


def _find_rgb(rgb_root: Path, seq: str, stem: str) -> Path | None:
    for directory in (rgb_root / seq / "rgb", rgb_root / seq):
        if directory.is_dir():
            found = find_image(directory, stem)
            if found is not None:
                return found
    return None


def overlay(
    pred_root: str | Path,
    rgb_root: str | Path,
    output_root: str | Path,
    alpha: float = 0.5,
    cmap: str = "jet",
) -> list[Path]:
    """Blend every predicted map, colorized, onto its RGB frame."""
    pred_root, rgb_root, output_root = Path(pred_root), Path(rgb_root), Path(output_root)
    colormap = matplotlib.colormaps[cmap]
    written = []
    for seq_dir in sorted(p for p in pred_root.iterdir() if p.is_dir()):
        for pred in sorted(seq_dir.iterdir()):
            if pred.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rgb_path = _find_rgb(rgb_root, seq_dir.name, pred.stem)
            if rgb_path is None:
                raise DatasetError(f"No RGB frame for {pred} under {rgb_root / seq_dir.name}")
            rgb = read_rgb(rgb_path)
            saliency = read_map(pred)
            if saliency.shape != rgb.shape[:2]:
                t = torch.from_numpy(saliency)[None, None]
                saliency = resize_to(t, rgb.shape[:2])[0, 0].numpy()
            heat = colormap(saliency)[..., :3]
            blend = (1 - alpha) * rgb + alpha * heat
            path = output_root / seq_dir.name / f"{pred.stem}.png"
            write_rgb(blend, path)
            written.append(path)
    if not written:
        raise DatasetError(f"No predictions found under {pred_root}")
    return written


@torch.no_grad()
def measure_fps(model: nn.Module, input_size: tuple[int, int], frames: int = 10) -> float:
    """Frames per second on random inputs, after one warm-up pass."""
    model.eval()
    h, w = input_size
    x = torch.randn(1, 3, h, w)

    def run() -> None:
        if isinstance(model, PSNet):
            model(x, x)
        else:
            model(x)

    run()
    start = time.perf_counter()
    for _ in range(frames):
        run()
    elapsed = time.perf_counter() - start
    return frames / elapsed if elapsed > 0 else float("inf")
