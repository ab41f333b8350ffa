"""Middlebury color-wheel encoding of optical flow fields."""

from __future__ import annotations

import numpy as np

from .exceptions import InputShapeError

# Segment lengths of the wheel: red-yellow, yellow-green, green-cyan,
# cyan-blue, blue-magenta, magenta-red.
RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6


def make_colorwheel() -> np.ndarray:
    """(55, 3) wheel of RGB colors in [0, 1]."""
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col : col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col : col + YG, 1] = 255
    col += YG
    wheel[col : col + GC, 1] = 255
    wheel[col : col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col : col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col : col + CB, 2] = 255
    col += CB
    wheel[col : col + BM, 2] = 255
    wheel[col : col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col : col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col : col + MR, 0] = 255
    return wheel / 255.0


_WHEEL = make_colorwheel()


def wheel_color(angle: np.ndarray | float) -> np.ndarray:
    """Fully saturated wheel color for a flow direction in radians.

    Angle 0 maps to the start of the wheel; the wheel wraps at 2*pi.
    """
    angle = np.asarray(angle, dtype=np.float64)
    ncols = _WHEEL.shape[0]
    fk = np.mod(angle / (2 * np.pi), 1.0) * ncols
    k0 = np.floor(fk).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    f = (fk - np.floor(fk))[..., None]
    return (1 - f) * _WHEEL[k0] + f * _WHEEL[k1]


def flow_to_rgb(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Encode a flow field as an (H, W, 3) float image in [0, 1].

    Hue follows atan2(v, u). Saturation grows with magnitude normalized by the
    per-image maximum, so zero flow is white.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise InputShapeError(f"Flow components differ in shape: {u.shape} vs {v.shape}")
    rad = np.hypot(u, v)
    peak = rad.max() if rad.size else 0.0
    rad = rad / (peak if peak > 0 else 1.0)
    color = wheel_color(np.arctan2(v, u))
    return np.clip(1.0 - rad[..., None] * (1.0 - color), 0.0, 1.0)
