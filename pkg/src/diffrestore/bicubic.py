"""Separable cubic-convolution resampling.

Used for two things: upscaling measurements to restoration dimensions when
building the conditioning tensor, and realizing "bicubic s-fold" degradation
as an explicit blur kernel so it lives inside the linear operator algebra
with an exact pseudo-inverse.
"""

from __future__ import annotations

import numpy as np

from .operators import Kernel
from .video import VideoTensor

CUBIC_A = -0.5  # standard cubic-convolution parameter


def cubic_weight(x: np.ndarray) -> np.ndarray:
    """Piecewise-cubic interpolation kernel with support (-2, 2)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    a = CUBIC_A
    near = (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0
    far = a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _axis_weights(in_len: int, factor: int) -> np.ndarray:
    """Dense (in_len * factor, in_len) interpolation matrix, edge-replicated."""
    out_len = in_len * factor
    weights = np.zeros((out_len, in_len))
    for i in range(out_len):
        src = (i + 0.5) / factor - 0.5
        base = int(np.floor(src))
        for j in range(base - 1, base + 3):
            w = float(cubic_weight(src - j))
            weights[i, min(max(j, 0), in_len - 1)] += w
    return weights


def upscale_bicubic(v: VideoTensor, factor: int) -> VideoTensor:
    """Center-aligned cubic upscaling of every frame by an integer factor."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return VideoTensor(v.data, unclamped=True)
    wh = _axis_weights(v.height, factor)
    ww = _axis_weights(v.width, factor)
    out = np.einsum("ph,nhwc,qw->npqc", wh, v.data, ww, optimize=True)
    return VideoTensor(out, unclamped=True)


def bicubic_kernel(scale: int) -> Kernel:
    """Anti-alias blur kernel equivalent to cubic s-fold downsampling.

    Separable taps c(d) = cubic(d / s) / s at integer offsets |d| <= 2s - 1,
    normalized to sum 1; combined with top-left decimation by s this realizes
    the bicubic degradation as one linear operator.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        taps = np.array([1.0])
    else:
        offsets = np.arange(-2 * scale + 1, 2 * scale)
        taps = cubic_weight(offsets / scale) / scale
    kernel = np.outer(taps, taps)
    return Kernel(kernel / kernel.sum())
