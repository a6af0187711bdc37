"""Deterministic synthetic sequences with known motion, for demos and tests."""

from __future__ import annotations

import numpy as np

from .video import FlowField, VideoTensor


def smooth_pattern(height: int, width: int, seed: int = 0, waves: int = 6,
                   detail: float = 0.2) -> np.ndarray:
    """Periodic smooth pattern: a few random low-frequency waves plus mild detail.

    Periodicity makes integer translation with wraparound exact, so translated
    copies of the pattern have known ground-truth flow.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    for _ in range(waves):
        fy = rng.integers(1, 4) / height
        fx = rng.integers(1, 4) / width
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase)
    if detail > 0:
        fy = rng.integers(6, 10) / height
        fx = rng.integers(6, 10) / width
        img += detail * np.sin(2 * np.pi * (fx * xs + fy * ys))
    img -= img.mean()
    img /= np.abs(img).max()
    return 0.9 * img


def smooth_motion_video(num_frames: int, height: int, width: int, channels: int = 1,
                        seed: int = 0, shift: tuple[int, int] = (1, 0)) -> VideoTensor:
    """Sequence of a smooth pattern drifting by an integer shift per frame."""
    sx, sy = shift
    frames = np.empty((num_frames, height, width, channels))
    for c in range(channels):
        pattern = smooth_pattern(height, width, seed + c)
        for n in range(num_frames):
            frames[n, :, :, c] = np.roll(pattern, (n * sy, n * sx), axis=(0, 1))
    return VideoTensor(frames)


def translation_flow(num_frames: int, height: int, width: int,
                     shift: tuple[int, int] = (1, 0)) -> FlowField:
    """Ground-truth flow for smooth_motion_video: constant (u, v) = shift."""
    sx, sy = shift
    flow = np.empty((num_frames - 1, height, width, 2))
    flow[..., 0] = sx
    flow[..., 1] = sy
    valid = np.ones((num_frames - 1, height, width), dtype=bool)
    return FlowField(flow, valid)
