from __future__ import annotations

import tempfile
from pathlib import Path

import pytest
import torch

from psnet.backbone import LEVELS, Branch, FeaturePyramid
from psnet.config import tiny_config
from psnet.synthetic import SyntheticClipSpec, generate_clip, random_clip_specs, write_clip


@pytest.fixture
def tmp_dir():
    """Provide a temporary directory for test outputs."""
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


@pytest.fixture
def make_config():
    """Factory fixture for the desk-scale config.

    Usage:
        cfg = make_config(size=96, ablation="B+GDR")
    """
    def _make(**kwargs):
        return tiny_config(**kwargs)
    return _make


@pytest.fixture
def make_pyramid():
    """Factory fixture: a random projected pyramid for an input of ``size``."""
    def _make(channels=8, size=64, batch=2, dtype=torch.float32, seed=0,
              branch=Branch.APPEARANCE):
        gen = torch.Generator().manual_seed(seed)
        levels = {
            i: torch.randn(batch, channels, size >> i, size >> i, generator=gen, dtype=dtype)
            for i in LEVELS
        }
        return FeaturePyramid(levels, branch, projected=True)
    return _make


@pytest.fixture
def make_clips():
    """Factory fixture: in-memory synthetic clips, one sample list per clip."""
    def _make(count=2, size=64, n_frames=3, seed=0, distractors=1):
        specs = random_clip_specs(count, (size, size), n_frames, seed, distractors)
        return [generate_clip(spec, f"clip{k}") for k, spec in enumerate(specs)]
    return _make


@pytest.fixture
def make_dataset(tmp_dir):
    """Factory fixture: synthetic clips written in the dataset layout.

    Usage:
        root = make_dataset(count=2, n_frames=3)
    """
    def _make(count=2, size=64, n_frames=3, seed=0, distractors=1, name="data"):
        root = tmp_dir / name
        specs = random_clip_specs(count, (size, size), n_frames, seed, distractors)
        for k, spec in enumerate(specs):
            write_clip(spec, root, f"seq{k}")
        return root
    return _make


@pytest.fixture
def disk_spec():
    return SyntheticClipSpec(
        seed=3, n_frames=5, size=(64, 64), shape="disk", shape_size=8,
        start=(20, 32), velocity=(2, 0), texture="flat",
    )
