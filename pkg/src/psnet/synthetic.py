"""Synthetic moving-shape clips with exact ground truth and analytic flow."""

from __future__ import annotations

import dataclasses
import inspect
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from matplotlib.path import Path as ShapePath

from .data import VideoSample, write_map, write_rgb
from .exceptions import DatasetError
from .flow import flow_to_rgb

logger = logging.getLogger(__name__)

SHAPES = ("disk", "rectangle", "polygon")
TEXTURES = ("noise", "stripes", "flat")
# rectangle height over width
RECT_ASPECT = 0.6


@dataclass
class Distractor:
    """A moving non-salient shape. Positions are in pixels, (x, y)."""

    shape: str = "rectangle"
    size: float = 6.0
    start: tuple[float, float] = (16.0, 16.0)
    velocity: tuple[float, float] = (2.0, 0.0)


@dataclass
class SyntheticClipSpec:
    seed: int = 0
    n_frames: int = 5
    size: tuple[int, int] = (64, 64)
    shape: str = "disk"
    shape_size: float = 8.0
    start: tuple[float, float] | None = None
    velocity: tuple[float, float] = (2.0, 0.0)
    texture: str = "noise"
    distractors: list[Distractor] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.size = tuple(self.size)  # type: ignore[assignment]
        self.velocity = tuple(self.velocity)  # type: ignore[assignment]
        if self.start is not None:
            self.start = tuple(self.start)  # type: ignore[assignment]
        self.distractors = [
            d if isinstance(d, Distractor) else Distractor(**d) for d in self.distractors
        ]
        for axis, n in zip(("height", "width"), self.size):
            if n <= 0 or n % 32:
                raise DatasetError(f"Clip {axis} {n} is not a positive multiple of 32")
        if self.n_frames < 2:
            raise DatasetError(f"A clip needs at least 2 frames, got {self.n_frames}")
        if self.shape not in SHAPES:
            raise DatasetError(f"Unknown shape '{self.shape}' (choose from {', '.join(SHAPES)})")
        if self.texture not in TEXTURES:
            raise DatasetError(f"Unknown texture '{self.texture}'")
        if self.shape_size <= 0:
            raise DatasetError("shape_size must be positive")
        for d in self.distractors:
            if d.shape not in SHAPES:
                raise DatasetError(f"Unknown distractor shape '{d.shape}'")
        for name, shape, shape_size, start, velocity in self._movers():
            extents = half_extents(shape, shape_size)
            for t in range(self.n_frames):
                if not self._visible(start, velocity, extents, t):
                    raise DatasetError(f"The {name} leaves the frame entirely at frame {t}")

    @property
    def target_start(self) -> tuple[float, float]:
        if self.start is not None:
            return self.start
        h, w = self.size
        return (w / 2.0, h / 2.0)

    def _movers(
        self,
    ) -> list[tuple[str, str, float, tuple[float, float], tuple[float, float]]]:
        movers = [("target", self.shape, self.shape_size, self.target_start, self.velocity)]
        movers += [
            (f"distractor {k}", d.shape, d.size, tuple(d.start), tuple(d.velocity))
            for k, d in enumerate(self.distractors)
        ]
        return movers

    def _visible(
        self,
        start: tuple[float, float],
        velocity: tuple[float, float],
        extents: tuple[float, float],
        t: int,
    ) -> bool:
        """Whether the shape's bounding box still reaches a pixel center at frame ``t``."""
        h, w = self.size
        rx, ry = extents
        x = start[0] + velocity[0] * t
        y = start[1] + velocity[1] * t
        return -rx < x < w - 1 + rx and -ry < y < h - 1 + ry

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SyntheticClipSpec:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise DatasetError(f"Unknown clip spec key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**raw)
        except TypeError as e:
            raise DatasetError(f"Invalid clip spec: {e}") from e


def _polygon(cx: float, cy: float, r: float, sides: int = 5) -> ShapePath:
    angles = np.pi / 2 + 2 * np.pi * np.arange(sides) / sides
    vertices = np.stack([cx + r * np.cos(angles), cy - r * np.sin(angles)], axis=1)
    return ShapePath(np.vstack([vertices, vertices[:1]]), closed=True)


def half_extents(shape: str, r: float) -> tuple[float, float]:
    """Horizontal and vertical half-size of a shape drawn with size ``r``."""
    if shape == "rectangle":
        return r, RECT_ASPECT * r
    if shape == "polygon":
        # pentagon with a vertex pointing up
        return r * float(np.sin(2 * np.pi / 5)), r
    return r, r


def rasterize(shape: str, center: tuple[float, float], r: float, size: tuple[int, int]) -> np.ndarray:
    """Boolean mask of a shape sampled at pixel centers."""
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = center
    if shape == "disk":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if shape == "rectangle":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= RECT_ASPECT * r)
    if shape == "polygon":
        points = np.stack([xx.ravel(), yy.ravel()], axis=1)
        return _polygon(cx, cy, r).contains_points(points).reshape(h, w)
    raise DatasetError(f"Unknown shape '{shape}'")


def _background(spec: SyntheticClipSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.size
    base = rng.uniform(0.2, 0.8, size=3)
    if spec.texture == "flat":
        return np.broadcast_to(base, (h, w, 3)).copy()
    if spec.texture == "stripes":
        period = rng.uniform(6, 16)
        angle = rng.uniform(0, np.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period)
        return np.clip(base + 0.2 * (wave[..., None] - 0.5), 0, 1)
    noise = rng.normal(0.0, 0.08, size=(h, w, 3))
    return np.clip(base + noise, 0, 1)


@dataclass
class _Layer:
    shape: str
    size: float
    start: tuple[float, float]
    velocity: tuple[float, float]
    color: np.ndarray
    is_target: bool

    def center(self, t: int) -> tuple[float, float]:
        return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)


def render_clip(spec: SyntheticClipSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render all frames.

    Returns ``frames`` (T, H, W, 3), target masks (T, H, W) and flow (T, 2, H, W)
    where flow[t] is the displacement from frame t to t+1 of each visible region.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    background = _background(spec, rng)
    layers = [
        _Layer(d.shape, d.size, tuple(d.start), tuple(d.velocity), rng.uniform(0, 1, 3), False)
        for d in spec.distractors
    ]
    # target is drawn last so it occludes distractors
    layers.append(
        _Layer(spec.shape, spec.shape_size, spec.target_start, spec.velocity,
               rng.uniform(0, 1, 3), True)
    )
    frames = np.empty((spec.n_frames, h, w, 3), dtype=np.float32)
    masks = np.zeros((spec.n_frames, h, w), dtype=np.float32)
    flows = np.zeros((spec.n_frames, 2, h, w), dtype=np.float32)
    for t in range(spec.n_frames):
        frame = background.copy()
        target = np.zeros((h, w), dtype=bool)
        for layer in layers:
            region = rasterize(layer.shape, layer.center(t), layer.size, (h, w))
            frame[region] = layer.color
            flows[t, 0][region] = layer.velocity[0]
            flows[t, 1][region] = layer.velocity[1]
            if layer.is_target:
                target = region
            else:
                target &= ~region
        frames[t] = frame
        masks[t] = target
    return frames, masks, flows


def generate_clip(spec: SyntheticClipSpec, name: str = "clip") -> list[VideoSample]:
    """Samples for frames 0..T-2, each paired with the flow towards the next frame."""
    frames, masks, flows = render_clip(spec)
    samples = []
    for t in range(spec.n_frames - 1):
        uv = flows[t]
        samples.append(
            VideoSample(
                rgb=frames[t],
                flow_rgb=flow_to_rgb(uv[0], uv[1]).astype(np.float32),
                gt=masks[t],
                sequence_id=name,
                frame_index=t,
                flow_uv=uv,
            )
        )
    return samples


def write_clip(spec: SyntheticClipSpec, root: str | Path, name: str) -> Path:
    """Write one clip in the dataset layout and return its directory."""
    frames, masks, flows = render_clip(spec)
    seq_dir = Path(root) / name
    for t in range(spec.n_frames):
        stem = f"{t:05d}.png"
        write_rgb(frames[t], seq_dir / "rgb" / stem)
        write_map(masks[t], seq_dir / "gt" / stem)
        if t < spec.n_frames - 1:
            write_rgb(flow_to_rgb(flows[t, 0], flows[t, 1]), seq_dir / "flow" / stem)
    logger.debug("Wrote clip %s (%d frames) to %s", name, spec.n_frames, seq_dir)
    return seq_dir


def random_clip_specs(
    count: int,
    size: tuple[int, int] = (64, 64),
    n_frames: int = 5,
    seed: int = 0,
    distractors: int = 1,
) -> list[SyntheticClipSpec]:
    """Seeded varied clips: moving targets of every shape, optionally with distractors."""
    rng = np.random.default_rng(seed)
    h, w = size
    specs = []
    for k in range(count):
        r = float(rng.uniform(0.12, 0.2) * min(h, w))
        speed = float(rng.uniform(1.0, 3.0))
        angle = float(rng.uniform(0, 2 * np.pi))
        start = (float(rng.uniform(0.35, 0.65) * w), float(rng.uniform(0.35, 0.65) * h))
        extra = []
        for _ in range(distractors):
            d_start = (float(rng.uniform(0.1, 0.9) * w), float(rng.uniform(0.1, 0.9) * h))
            d_angle = float(rng.uniform(0, 2 * np.pi))
            extra.append(
                Distractor(
                    shape=SHAPES[int(rng.integers(len(SHAPES)))],
                    size=float(rng.uniform(0.05, 0.08) * min(h, w)),
                    start=d_start,
                    velocity=(np.cos(d_angle), np.sin(d_angle)),
                )
            )
        specs.append(
            SyntheticClipSpec(
                seed=seed * 1000 + k,
                n_frames=n_frames,
                size=size,
                shape=SHAPES[k % len(SHAPES)],
                shape_size=r,
                start=start,
                velocity=(speed * np.cos(angle), speed * np.sin(angle)),
                texture=TEXTURES[k % len(TEXTURES)],
                distractors=extra,
            )
        )
    return specs


def load_clip_specs(path: str | Path) -> dict[str, SyntheticClipSpec]:
    """Read a YAML file of named clips.

    Either ``clips: {name: {...spec...}}`` or ``random: {count, size, n_frames,
    seed, distractors}`` (or both).
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise DatasetError(f"Cannot read clip spec file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise DatasetError(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(raw, dict) or not set(raw) <= {"clips", "random"}:
        raise DatasetError(f"Clip spec file {path} must have 'clips' and/or 'random' sections")
    specs: dict[str, SyntheticClipSpec] = {}
    random_section = raw.get("random")
    if random_section:
        params = dict(random_section)
        unknown = set(params) - set(inspect.signature(random_clip_specs).parameters)
        if unknown:
            names = ", ".join(sorted(map(str, unknown)))
            raise DatasetError(f"Unknown random clip key(s): {names}")
        if "size" in params:
            params["size"] = tuple(params["size"])
        try:
            random_specs = random_clip_specs(**params)
        except (TypeError, ValueError) as e:
            raise DatasetError(f"Invalid random clip section in {path}: {e}") from e
        for k, spec in enumerate(random_specs):
            specs[f"random{k:03d}"] = spec
    for name, section in (raw.get("clips") or {}).items():
        specs[str(name)] = SyntheticClipSpec.from_dict(section or {})
    if not specs:
        raise DatasetError(f"Clip spec file {path} defines no clips")
    return specs


def write_dataset(specs: dict[str, SyntheticClipSpec], root: str | Path) -> list[Path]:
    root = Path(root)
    written = [write_clip(spec, root, name) for name, spec in specs.items()]
    logger.info("Wrote %d synthetic clips to %s", len(written), root)
    return written
