"""Distortion and temporal-consistency metrics.

All metrics convert from model range [-1, 1] to [0, 1] first, matching 8-bit
conventions, and are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .video import FlowField, VideoTensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    """Metric inputs are dimensionally or semantically invalid."""


def _to_unit(v: VideoTensor) -> np.ndarray:
    return (v.data + 1.0) / 2.0


def _check_same_dims(a: VideoTensor, b: VideoTensor) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: VideoTensor, b: VideoTensor) -> np.ndarray:
    """Per-frame PSNR in dB on the [0, 1] scale; +inf for identical frames."""
    _check_same_dims(a, b)
    diff = _to_unit(a) - _to_unit(b)
    mse = np.mean(diff**2, axis=(1, 2, 3))
    out = np.full(a.num_frames, np.inf)
    nonzero = mse > 0
    out[nonzero] = 10.0 * np.log10(1.0 / mse[nonzero])
    return out


def ssim(a: VideoTensor, b: VideoTensor, window: int = SSIM_WINDOW,
         k1: float = SSIM_K1, k2: float = SSIM_K2) -> np.ndarray:
    """Per-frame mean structural similarity with a Gaussian window.

    Local means, variances, and covariance come from Gaussian weighting
    (sigma 1.5, 11x11 support, reflect boundaries); the window-radius border
    is cropped before averaging. Channels are scored independently and
    averaged.
    """
    _check_same_dims(a, b)
    if a.height < window or a.width < window:
        raise MetricError(f"frame {a.height}x{a.width} smaller than the {window}x{window} window")
    ua = _to_unit(a)
    ub = _to_unit(b)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    # truncate chosen so the Gaussian support matches the window size exactly
    truncate = (window - 1) / 2 / SSIM_SIGMA
    pad = (window - 1) // 2

    def local_mean(img: np.ndarray) -> np.ndarray:
        return gaussian_filter(img, SSIM_SIGMA, mode="reflect", truncate=truncate)

    scores = np.empty(a.num_frames)
    for n in range(a.num_frames):
        per_channel = []
        for c in range(a.channels):
            x = ua[n, :, :, c]
            y = ub[n, :, :, c]
            mx = local_mean(x)
            my = local_mean(y)
            mxx = local_mean(x * x)
            myy = local_mean(y * y)
            mxy = local_mean(x * y)
            vx = mxx - mx * mx
            vy = myy - my * my
            cxy = mxy - mx * my
            num = (2 * mx * my + c1) * (2 * cxy + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            smap = num / den
            per_channel.append(np.mean(smap[pad:-pad, pad:-pad]))
        scores[n] = np.mean(per_channel)
    return scores


def _warp_frame(frame: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear warp: sample ``frame`` at (x + u, y + v); returns (warped, in_bounds)."""
    h, w, _ = frame.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src_x = xs + flow[:, :, 0]
    src_y = ys + flow[:, :, 1]
    in_bounds = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    cx = np.clip(src_x, 0, w - 1)
    cy = np.clip(src_y, 0, h - 1)
    x0 = np.floor(cx).astype(int)
    y0 = np.floor(cy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (cx - x0)[:, :, None]
    fy = (cy - y0)[:, :, None]
    warped = (
        frame[y0, x0] * (1 - fy) * (1 - fx)
        + frame[y0, x1] * (1 - fy) * fx
        + frame[y1, x0] * fy * (1 - fx)
        + frame[y1, x1] * fy * fx
    )
    return warped, in_bounds


def warping_error(v: VideoTensor, flow: FlowField) -> float:
    """Mean squared difference between frames and their flow-warped successors.

    For each pair (n, n+1), frame n+1 is bilinearly warped backward along the
    flow and compared to frame n over the valid mask (provided mask AND
    in-bounds); the per-pixel squared difference is averaged over channels,
    valid pixels, and pairs. Lower is temporally smoother.
    """
    if flow.num_pairs != v.num_frames - 1:
        raise MetricError(
            f"flow holds {flow.num_pairs} pairs but video has {v.num_frames} frames"
        )
    if flow.flow.shape[1:3] != (v.height, v.width):
        raise MetricError("flow spatial dims do not match the video")
    unit = _to_unit(v)
    totals = []
    for n in range(flow.num_pairs):
        warped, in_bounds = _warp_frame(unit[n + 1], flow.flow[n])
        valid = flow.valid[n] & in_bounds
        if not valid.any():
            raise MetricError(f"empty valid mask for frame pair {n}")
        sq = np.mean((unit[n] - warped) ** 2, axis=2)
        totals.append(float(sq[valid].mean()))
    return float(np.mean(totals))


@dataclass(frozen=True)
class MetricReport:
    """Per-frame distortion scores plus aggregates for one restored sequence."""

    psnr: np.ndarray
    ssim: np.ndarray
    e_warp: float | None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def evaluate(restored: VideoTensor, reference: VideoTensor,
             flow: FlowField | None = None) -> MetricReport:
    """PSNR/SSIM per frame, plus flow-warping error when a flow is supplied."""
    e_warp = warping_error(restored, flow) if flow is not None else None
    return MetricReport(psnr(restored, reference), ssim(restored, reference), e_warp)
