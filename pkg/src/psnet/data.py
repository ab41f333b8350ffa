"""Dataset layout, sample loading, augmentation and the torch dataset wrapper.

Layout: ``root/<Sequence>/{rgb,flow,gt}/<frame>.png``. With both ``rgb`` and
``flow`` present each sample pairs frame t with the flow from t to t+1, so the
last frame of a sequence yields no sample. A missing ``flow`` directory gives
a static-image (appearance only) dataset; a missing ``rgb`` directory gives a
flow-only dataset.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch.utils.data import Dataset

from .backbone import Branch
from .config import DataConfig
from .exceptions import DatasetError
from .flow import flow_to_rgb
from .metrics import IMAGE_SUFFIXES, find_image

logger = logging.getLogger(__name__)

MODALITIES = ("rgb", "flow", "gt")

_warned_real_flow_flip = False


@dataclass
class VideoSample:
    """One training or inference sample. Images are float arrays in [0, 1].

    ``rgb`` and ``flow_rgb`` are (H, W, 3), ``gt`` is (H, W) with values in
    {0, 1}. ``flow_uv`` holds the analytic (2, H, W) flow when it is known.
    """

    rgb: np.ndarray | None
    flow_rgb: np.ndarray | None
    gt: np.ndarray | None
    sequence_id: str
    frame_index: int
    flow_uv: np.ndarray | None = None
    original_size: tuple[int, int] | None = None
    stem: str | None = None

    def __post_init__(self) -> None:
        sizes = {m.shape[:2] for m in (self.rgb, self.flow_rgb, self.gt) if m is not None}
        if len(sizes) > 1:
            raise DatasetError(
                f"{self.sequence_id}/{self.frame_index}: maps differ in size {sorted(sizes)}"
            )
        if self.original_size is None and sizes:
            self.original_size = next(iter(sizes))

    @property
    def size(self) -> tuple[int, int]:
        for m in (self.rgb, self.flow_rgb, self.gt):
            if m is not None:
                return int(m.shape[0]), int(m.shape[1])
        raise DatasetError(f"{self.sequence_id}/{self.frame_index}: sample has no maps")

    @property
    def name(self) -> str:
        return self.stem if self.stem is not None else f"{self.frame_index:05d}"


@dataclass
class FrameRecord:
    frame_index: int
    stem: str
    rgb: Path | None = None
    flow: Path | None = None
    gt: Path | None = None


def _resize(img: Image.Image, size: tuple[int, int], resample: int) -> Image.Image:
    h, w = size
    if img.size == (w, h):
        return img
    return img.resize((w, h), resample=resample)


def read_rgb(path: Path, size: tuple[int, int] | None = None) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None:
            img = _resize(img, size, Image.Resampling.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0


def read_mask(path: Path, size: tuple[int, int] | None = None) -> tuple[np.ndarray, int]:
    """Binary mask at 0.5 plus the number of gray pixels that were binarized."""
    with Image.open(path) as img:
        img = img.convert("L")
        raw = np.asarray(img)
        gray = int(np.count_nonzero((raw != 0) & (raw != 255)))
        if size is not None and img.size != (size[1], size[0]):
            raw = np.asarray(_resize(img, size, Image.Resampling.BILINEAR))
    return (raw >= 128).astype(np.float32), gray


def write_map(saliency: np.ndarray, path: Path) -> None:
    """Save a [0, 1] map as an 8-bit single-channel PNG."""
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.rint(np.clip(saliency, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def write_rgb(image: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def _stems(directory: Path) -> list[str]:
    return sorted(p.stem for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _frame_index(stem: str, position: int) -> int:
    return int(stem) if stem.isdigit() else position


def _require(directory: Path, stem: str) -> Path:
    path = find_image(directory, stem)
    if path is None:
        raise DatasetError(f"Missing file {directory / (stem + '.png')}")
    return path


@dataclass
class VideoSequence(Sequence[VideoSample]):
    """Frames of one sequence, loaded lazily and resized to ``input_size``."""

    name: str
    frames: list[FrameRecord]
    input_size: tuple[int, int] | None = None
    _warned: bool = field(default=False, repr=False)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, index: int) -> VideoSample:  # type: ignore[override]
        record = self.frames[index]
        size = self.input_size
        original = None
        rgb = flow_rgb = gt = None
        for path in (record.rgb, record.flow, record.gt):
            if path is not None:
                with Image.open(path) as img:
                    original = (img.size[1], img.size[0])
                break
        if size is not None and original is not None and original != size:
            self._note_resize(original, size)
        if record.rgb is not None:
            rgb = read_rgb(record.rgb, size)
        if record.flow is not None:
            flow_rgb = read_rgb(record.flow, size)
        if record.gt is not None:
            gt, gray = read_mask(record.gt, size)
            if gray:
                logger.warning("%s: binarized %d gray ground-truth pixels at 0.5", record.gt, gray)
        return VideoSample(
            rgb=rgb,
            flow_rgb=flow_rgb,
            gt=gt,
            sequence_id=self.name,
            frame_index=record.frame_index,
            original_size=original,
            stem=record.stem,
        )

    def _note_resize(self, original: tuple[int, int], size: tuple[int, int]) -> None:
        if self._warned:
            return
        self._warned = True
        if original[0] % 32 or original[1] % 32:
            logger.warning(
                "Sequence %s: frame size %s is not divisible by 32; resizing to %s",
                self.name, original, size,
            )
        else:
            logger.info("Sequence %s: resizing frames from %s to %s", self.name, original, size)

    def __iter__(self) -> Iterator[VideoSample]:
        for i in range(len(self)):
            yield self[i]


def _scan_sequence(seq_dir: Path, require: tuple[str, ...]) -> list[FrameRecord]:
    dirs = {m: seq_dir / m for m in MODALITIES if (seq_dir / m).is_dir()}
    for m in require:
        if m not in dirs:
            raise DatasetError(f"Missing directory {seq_dir / m}")
    if "rgb" in dirs:
        stems = _stems(dirs["rgb"])
        paired = "flow" in dirs
    elif "flow" in dirs:
        stems = _stems(dirs["flow"])
        paired = False
    else:
        raise DatasetError(f"Sequence {seq_dir} has neither rgb nor flow frames")
    if paired:
        # flow for frame t needs frame t+1
        stems = stems[:-1]
    records = []
    for pos, stem in enumerate(stems):
        record = FrameRecord(frame_index=_frame_index(stem, pos), stem=stem)
        for m, directory in dirs.items():
            setattr(record, m, _require(directory, stem))
        records.append(record)
    return records


def is_sequence_dir(path: str | Path) -> bool:
    """True when ``path`` holds frame directories itself rather than sequences."""
    return any((Path(path) / m).is_dir() for m in ("rgb", "flow"))


def load_sequence(
    seq_dir: str | Path,
    input_size: tuple[int, int] | None = None,
    require: tuple[str, ...] = ("gt",),
) -> VideoSequence:
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise DatasetError(f"Sequence directory not found: {seq_dir}")
    frames = _scan_sequence(seq_dir, require)
    if not frames:
        raise DatasetError(f"No frames found under {seq_dir}")
    logger.info("Loaded sequence %s with %d samples", seq_dir.name, len(frames))
    return VideoSequence(seq_dir.name, frames, input_size)


def load_pair(
    rgb: str | Path, flow: str | Path, input_size: tuple[int, int] | None = None
) -> VideoSequence:
    """One RGB frame and its flow image as a single-sample sequence."""
    rgb, flow = Path(rgb), Path(flow)
    for path in (rgb, flow):
        if not path.is_file():
            raise DatasetError(f"Input image not found: {path}")
    record = FrameRecord(frame_index=_frame_index(rgb.stem, 0), stem=rgb.stem, rgb=rgb, flow=flow)
    return VideoSequence(rgb.parent.name, [record], input_size)


def load_dataset(
    root: str | Path,
    split: str | None = None,
    input_size: tuple[int, int] | None = None,
    require: tuple[str, ...] = ("gt",),
) -> list[VideoSequence]:
    """Scan a dataset root into sequences ordered by name, frames by index."""
    base = Path(root) / split if split else Path(root)
    if not base.is_dir():
        raise DatasetError(f"Dataset directory not found: {base}")
    sequences = []
    for seq_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        frames = _scan_sequence(seq_dir, require)
        if frames:
            sequences.append(VideoSequence(seq_dir.name, frames, input_size))
    if not sequences:
        raise DatasetError(f"No frames found under {base}")
    total = sum(len(s) for s in sequences)
    logger.info("Loaded %d sequences with %d samples from %s", len(sequences), total, base)
    return sequences


def _resize_array(x: np.ndarray, size: tuple[int, int], mode: str) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
    chw = t.permute(2, 0, 1) if t.dim() == 3 else t.unsqueeze(0)
    kwargs = {"align_corners": False} if mode == "bilinear" else {}
    out = F.interpolate(chw.unsqueeze(0), size=size, mode=mode, **kwargs)[0]
    out = out.permute(1, 2, 0) if x.ndim == 3 else out[0]
    return out.numpy()


def _fit(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Zero-pad or center-crop the leading two axes to ``size``."""
    h, w = x.shape[:2]
    th, tw = size
    if h > th:
        top = (h - th) // 2
        x = x[top : top + th]
    if w > tw:
        left = (w - tw) // 2
        x = x[:, left : left + tw]
    h, w = x.shape[:2]
    if h < th or w < tw:
        top, left = (th - h) // 2, (tw - w) // 2
        pad = [(top, th - h - top), (left, tw - w - left)] + [(0, 0)] * (x.ndim - 2)
        x = np.pad(x, pad)
    return x


def rescale(sample: VideoSample, scale: float) -> VideoSample:
    if scale == 1:
        return sample
    size = sample.size
    scaled = (int(round(size[0] * scale)), int(round(size[1] * scale)))

    def image(x: np.ndarray | None) -> np.ndarray | None:
        return None if x is None else _fit(_resize_array(x, scaled, "bilinear"), size)

    gt = None
    if sample.gt is not None:
        gt = _fit((_resize_array(sample.gt, scaled, "nearest") >= 0.5).astype(np.float32), size)
    flow_uv = flow_rgb = None
    if sample.flow_uv is not None:
        uv = np.moveaxis(sample.flow_uv, 0, -1) * scale
        flow_uv = np.moveaxis(_fit(_resize_array(uv, scaled, "bilinear"), size), -1, 0)
        flow_rgb = flow_to_rgb(flow_uv[0], flow_uv[1]).astype(np.float32)
    else:
        flow_rgb = image(sample.flow_rgb)
    return replace(sample, rgb=image(sample.rgb), flow_rgb=flow_rgb, gt=gt, flow_uv=flow_uv)


def flip(sample: VideoSample, axis: int) -> VideoSample:
    """Mirror every map along ``axis`` (0 vertical, 1 horizontal)."""
    global _warned_real_flow_flip

    def mirror(x: np.ndarray | None) -> np.ndarray | None:
        return None if x is None else np.ascontiguousarray(np.flip(x, axis=axis))

    flow_uv = flow_rgb = None
    if sample.flow_uv is not None:
        flow_uv = np.ascontiguousarray(np.flip(sample.flow_uv, axis=axis + 1))
        # horizontal mirror negates u, vertical negates v
        flow_uv[1 - axis] = -flow_uv[1 - axis]
        flow_rgb = flow_to_rgb(flow_uv[0], flow_uv[1]).astype(np.float32)
    elif sample.flow_rgb is not None:
        if not _warned_real_flow_flip:
            logger.warning(
                "Flipping color-encoded flow as an image; its hue is not mirrored"
            )
            _warned_real_flow_flip = True
        flow_rgb = mirror(sample.flow_rgb)
    return replace(
        sample, rgb=mirror(sample.rgb), flow_rgb=flow_rgb, gt=mirror(sample.gt), flow_uv=flow_uv
    )


def augment(
    sample: VideoSample,
    rng: np.random.Generator,
    scales: tuple[float, ...] = (0.75, 1.0, 1.25),
) -> VideoSample:
    """Random scale followed by independent horizontal and vertical flips."""
    scale = float(scales[rng.integers(len(scales))])
    hflip = rng.random() < 0.5
    vflip = rng.random() < 0.5
    out = rescale(sample, scale)
    if hflip:
        out = flip(out, axis=1)
    if vflip:
        out = flip(out, axis=0)
    return out


def to_tensor(image: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> torch.Tensor:
    """(H, W, 3) array in [0, 1] to a standardized (3, H, W) tensor."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)
    m = torch.tensor(mean, dtype=torch.float32).view(3, 1, 1)
    s = torch.tensor(std, dtype=torch.float32).view(3, 1, 1)
    return (t - m) / s


class SaliencyDataset(Dataset):
    """Flattened samples of several sequences as standardized tensors.

    Augmentation draws from a generator seeded by (seed, epoch, index), so a
    run is reproducible independent of worker scheduling.
    """

    def __init__(
        self,
        sequences: Sequence[Sequence[VideoSample]],
        data: DataConfig,
        augment: bool = False,
        seed: int = 0,
        modalities: tuple[Branch, ...] = (Branch.APPEARANCE, Branch.MOTION),
    ) -> None:
        self.sequences = list(sequences)
        self.index = [(s, i) for s, seq in enumerate(self.sequences) for i in range(len(seq))]
        self.data = data
        self.augment = augment
        self.seed = seed
        self.modalities = modalities
        self.epoch = 0
        if not self.index:
            raise DatasetError("Dataset has no samples")

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.index)

    def sample(self, item: int) -> VideoSample:
        s, i = self.index[item]
        sample = self.sequences[s][i]
        if self.augment:
            rng = np.random.default_rng([self.seed, self.epoch, item])
            sample = augment(sample, rng, self.data.scales)
        return sample

    def __getitem__(self, item: int) -> dict[str, torch.Tensor]:
        sample = self.sample(item)
        out: dict[str, torch.Tensor] = {}
        if Branch.APPEARANCE in self.modalities:
            if sample.rgb is None:
                raise DatasetError(f"{sample.sequence_id}/{sample.name}: missing rgb frame")
            out["rgb"] = to_tensor(sample.rgb, self.data.mean, self.data.std)
        if Branch.MOTION in self.modalities:
            if sample.flow_rgb is None:
                raise DatasetError(f"{sample.sequence_id}/{sample.name}: missing flow image")
            out["flow"] = to_tensor(sample.flow_rgb, self.data.mean, self.data.std)
        if sample.gt is None:
            raise DatasetError(f"{sample.sequence_id}/{sample.name}: missing ground truth")
        out["gt"] = torch.from_numpy(np.ascontiguousarray(sample.gt, dtype=np.float32))[None]
        return out
