"""Saliency metrics: MAE, maximum F-measure and S-measure, plus dataset aggregation."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .exceptions import DatasetError, InputShapeError

logger = logging.getLogger(__name__)

BETA2 = 0.3
ALPHA = 0.5
NUM_THRESHOLDS = 256
_EPS = np.finfo(np.float64).eps
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class FCurve:
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "precision": [float(x) for x in self.precision],
            "recall": [float(x) for x in self.recall],
            "f": [float(x) for x in self.f],
        }

    @classmethod
    def from_dict(cls, raw: dict[str, list[float]]) -> FCurve:
        return cls(*(np.asarray(raw[k], dtype=np.float64) for k in ("precision", "recall", "f")))


@dataclass
class Scores:
    max_f: float
    s_measure: float
    mae: float
    frames: int = 0
    excluded: int = 0

    def triple(self) -> tuple[float, float, float]:
        return self.max_f, self.s_measure, self.mae


@dataclass
class MetricReport:
    per_sequence: dict[str, Scores]
    aggregate: Scores
    f_curve: FCurve
    source: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": dict(self.source),
            "aggregate": _scores_dict(self.aggregate),
            "per_sequence": {k: _scores_dict(v) for k, v in self.per_sequence.items()},
            "f_curve": self.f_curve.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> MetricReport:
        return cls(
            per_sequence={k: _scores_from(v) for k, v in raw["per_sequence"].items()},
            aggregate=_scores_from(raw["aggregate"]),
            f_curve=FCurve.from_dict(raw["f_curve"]),
            source=dict(raw.get("source", {})),
        )


def _scores_dict(s: Scores) -> dict[str, Any]:
    return {
        "max_f": None if math.isnan(s.max_f) else s.max_f,
        "s_measure": s.s_measure,
        "mae": s.mae,
        "frames": s.frames,
        "excluded": s.excluded,
    }


def _scores_from(raw: dict[str, Any]) -> Scores:
    max_f = raw["max_f"]
    return Scores(
        max_f=math.nan if max_f is None else float(max_f),
        s_measure=float(raw["s_measure"]),
        mae=float(raw["mae"]),
        frames=int(raw.get("frames", 0)),
        excluded=int(raw.get("excluded", 0)),
    )


def _prepare(s: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g)
    if s.shape != g.shape:
        raise InputShapeError(f"Saliency map {s.shape} and ground truth {g.shape} differ in size")
    return s, g >= 0.5


def mae(s: np.ndarray, g: np.ndarray) -> float:
    s, gb = _prepare(s, g)
    return float(np.mean(np.abs(s - gb)))


def quantize(s: np.ndarray) -> np.ndarray:
    """8-bit levels 0..255 of a map in [0, 1]."""
    return np.rint(np.clip(s, 0.0, 1.0) * 255).astype(np.int64)


def f_curve(s: np.ndarray, g: np.ndarray) -> FCurve:
    """Precision, recall and F over the 256 thresholds.

    Threshold k marks a pixel salient when its 8-bit level exceeds k.
    """
    s, gb = _prepare(s, g)
    levels = quantize(s)
    fg_hist = np.bincount(levels[gb], minlength=NUM_THRESHOLDS)
    bg_hist = np.bincount(levels[~gb], minlength=NUM_THRESHOLDS)
    # count of pixels with level > k, for k = 0..255
    tp = np.concatenate([np.cumsum(fg_hist[::-1])[::-1][1:], [0]]).astype(np.float64)
    fp = np.concatenate([np.cumsum(bg_hist[::-1])[::-1][1:], [0]]).astype(np.float64)
    n_fg = float(gb.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(n_fg > 0, tp / max(n_fg, 1.0), 0.0)
        denom = BETA2 * precision + recall
        f = np.where(denom > 0, (1 + BETA2) * precision * recall / denom, 0.0)
    return FCurve(precision=precision, recall=recall, f=f)


def max_f_measure(s: np.ndarray, g: np.ndarray) -> tuple[float, FCurve]:
    """Maximum F-measure; NaN when the ground truth has no foreground."""
    curve = f_curve(s, g)
    if not np.any(np.asarray(g) >= 0.5):
        return math.nan, curve
    return float(curve.f.max()), curve


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mean = float(x.mean())
    sigma = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return 2.0 * mean / (mean**2 + 1.0 + sigma + _EPS)


def _s_object(s: np.ndarray, gb: np.ndarray) -> float:
    u = float(gb.mean())
    o_fg = _object_score(s[gb])
    o_bg = _object_score(1.0 - s[~gb])
    return u * o_fg + (1.0 - u) * o_bg


def _centroid(gb: np.ndarray) -> tuple[int, int]:
    h, w = gb.shape
    if not gb.any():
        return int(round(w / 2)), int(round(h / 2))
    rows, cols = np.nonzero(gb)
    return int(np.rint(cols.mean())) + 1, int(np.rint(rows.mean())) + 1


def _region_ssim(s: np.ndarray, g: np.ndarray) -> float:
    n = s.size
    x, y = float(s.mean()), float(g.mean())
    denom = max(n - 1, 1)
    sigma_x = float(((s - x) ** 2).sum()) / denom
    sigma_y = float(((g - y) ** 2).sum()) / denom
    sigma_xy = float(((s - x) * (g - y)).sum()) / denom
    alpha = 4 * x * y * sigma_xy
    beta = (x**2 + y**2) * (sigma_x + sigma_y)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(s: np.ndarray, gb: np.ndarray) -> float:
    h, w = gb.shape
    x, y = _centroid(gb)
    g = gb.astype(np.float64)
    area = h * w
    quadrants = (
        ((slice(0, y), slice(0, x)), x * y),
        ((slice(0, y), slice(x, w)), (w - x) * y),
        ((slice(y, h), slice(0, x)), x * (h - y)),
        ((slice(y, h), slice(x, w)), (w - x) * (h - y)),
    )
    score = 0.0
    for region, size in quadrants:
        if size == 0:
            continue
        score += size / area * _region_ssim(s[region], g[region])
    return score


def s_measure(s: np.ndarray, g: np.ndarray, alpha: float = ALPHA) -> float:
    s, gb = _prepare(s, g)
    y = gb.mean()
    if y == 0:
        return float(1.0 - s.mean())
    if y == 1:
        return float(s.mean())
    score = alpha * _s_object(s, gb) + (1 - alpha) * _s_region(s, gb)
    return float(max(score, 0.0))


@dataclass
class _Accumulator:
    frames: int = 0
    excluded: int = 0
    mae: float = 0.0
    s_measure: float = 0.0
    max_f: float = 0.0

    def add(self, s: np.ndarray, g: np.ndarray, curves: list[FCurve]) -> None:
        self.frames += 1
        self.mae += mae(s, g)
        self.s_measure += s_measure(s, g)
        best, curve = max_f_measure(s, g)
        if math.isnan(best):
            self.excluded += 1
        else:
            self.max_f += best
            curves.append(curve)

    def scores(self) -> Scores:
        counted = self.frames - self.excluded
        return Scores(
            max_f=self.max_f / counted if counted else math.nan,
            s_measure=self.s_measure / self.frames,
            mae=self.mae / self.frames,
            frames=self.frames,
            excluded=self.excluded,
        )


def evaluate_frames(
    frames: Iterable[tuple[str, np.ndarray, np.ndarray]],
) -> MetricReport:
    """Aggregate (sequence, prediction, ground truth) triples into a report."""
    per_seq: dict[str, _Accumulator] = {}
    total = _Accumulator()
    curves: list[FCurve] = []
    for seq, s, g in frames:
        per_seq.setdefault(seq, _Accumulator()).add(s, g, [])
        total.add(s, g, curves)
    if total.frames == 0:
        raise DatasetError("No frames to evaluate")
    if total.excluded:
        logger.warning(
            "%d frame(s) with empty ground truth excluded from max F-measure", total.excluded
        )
    if curves:
        precision = np.mean([c.precision for c in curves], axis=0)
        recall = np.mean([c.recall for c in curves], axis=0)
        f = np.mean([c.f for c in curves], axis=0)
    else:
        precision = recall = f = np.zeros(NUM_THRESHOLDS)
    return MetricReport(
        per_sequence={k: per_seq[k].scores() for k in sorted(per_seq)},
        aggregate=total.scores(),
        f_curve=FCurve(precision, recall, f),
    )


def read_map(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def find_image(directory: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def _gt_dir(gt_root: Path, seq: str) -> Path:
    nested = gt_root / seq / "gt"
    return nested if nested.is_dir() else gt_root / seq


def match_prediction_files(pred_root: Path, gt_root: Path) -> list[tuple[str, Path, Path]]:
    """Pair predictions with ground truth by sequence and frame name."""
    pred_root, gt_root = Path(pred_root), Path(gt_root)
    if not gt_root.is_dir():
        raise DatasetError(f"Ground-truth directory not found: {gt_root}")
    if not pred_root.is_dir():
        raise DatasetError(f"Prediction directory not found: {pred_root}")
    gt_seqs = sorted(p.name for p in gt_root.iterdir() if p.is_dir())
    pred_seqs = {p.name for p in pred_root.iterdir() if p.is_dir()}
    for seq in sorted(pred_seqs - set(gt_seqs)):
        raise DatasetError(f"Prediction sequence '{seq}' has no ground truth in {gt_root}")
    pairs: list[tuple[str, Path, Path]] = []
    for seq in gt_seqs:
        if seq not in pred_seqs:
            raise DatasetError(f"Sequence '{seq}' is missing from predictions in {pred_root}")
        gt_dir = _gt_dir(gt_root, seq)
        preds = sorted(p for p in (pred_root / seq).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        for pred in preds:
            gt = find_image(gt_dir, pred.stem)
            if gt is None:
                raise DatasetError(f"No ground truth for prediction {pred} (looked in {gt_dir})")
            pairs.append((seq, pred, gt))
    if not pairs:
        raise DatasetError(f"No predictions found under {pred_root}")
    return pairs


def evaluate_dataset(pred_root: str | Path, gt_root: str | Path) -> MetricReport:
    pairs = match_prediction_files(Path(pred_root), Path(gt_root))

    def frames():
        for seq, pred, gt in pairs:
            s, g = read_map(pred), read_map(gt)
            if s.shape != g.shape:
                raise InputShapeError(f"{pred} is {s.shape} but {gt} is {g.shape}")
            yield seq, s, g

    report = evaluate_frames(frames())
    report.source = {"pred_root": str(pred_root), "gt_root": str(gt_root)}
    return report
