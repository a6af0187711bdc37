"""Measurement-operator algebra: blur, decimation, noise, codec, pseudo-inverses.

Every linear operator here is a per-frame circular convolution followed by
top-left decimation, so its normal operator is diagonalized by the DFT of the
low-resolution grid and the Moore-Penrose pseudo-inverse has a closed form:
apply the inverse of the decimated kernel autocorrelation in the Fourier
domain, zero-fill upsample, and convolve with the mirrored kernel. Spectrum
entries below ``PINV_RELATIVE_THRESHOLD`` times the peak are treated as exact
zeros, which is the pseudo-inverse behavior on a rank-deficient operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .jpeg import JpegCodec
from .video import VideoTensor

KERNEL_SUM_TOL = 1e-12
PINV_RELATIVE_THRESHOLD = 1e-8

# Motion-trajectory generator constants (pinned; the kernels are deterministic
# per seed and these values are part of the regression surface).
MOTION_SUBSTEPS = 256
MOTION_VELOCITY_PERSISTENCE = 0.9
MOTION_JITTER_FRACTION = 1.0 / 12.0
MOTION_CENTROID_PULL = 0.08


class OperatorError(ValueError):
    """Invalid operator configuration or incompatible dimensions."""


@dataclass(frozen=True)
class Kernel:
    """Odd-sized square convolution kernel summing to one.

    Point-spread kernels (Gaussian, motion) are non-negative by construction;
    resampling-equivalent kernels (cubic anti-alias taps) legitimately carry
    small negative lobes, so the constructor enforces only normalization.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise OperatorError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise OperatorError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise OperatorError("kernel contains NaN or Inf")
        if abs(w.sum() - 1.0) > KERNEL_SUM_TOL:
            raise OperatorError(f"kernel must sum to 1 within {KERNEL_SUM_TOL}, got {w.sum()!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def nonnegative(self) -> bool:
        return bool(np.all(self.weights >= 0))

    def mirrored(self) -> "Kernel":
        return Kernel(self.weights[::-1, ::-1])


def delta_kernel(size: int = 1) -> Kernel:
    if size % 2 == 0:
        raise OperatorError(f"kernel size must be odd, got {size}")
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return Kernel(w)


def make_gaussian_kernel(size: int, sigma_x: float, sigma_y: float, theta: float = 0.0) -> Kernel:
    """Rotated anisotropic Gaussian sampled at integer offsets, normalized to sum 1."""
    if size % 2 == 0:
        raise OperatorError(f"kernel size must be odd, got {size}")
    if sigma_x <= 0 or sigma_y <= 0:
        raise OperatorError(f"sigma must be positive, got ({sigma_x}, {sigma_y})")
    half = size // 2
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    # rotate offsets into the kernel's principal frame
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    log_w = -0.5 * ((u / sigma_x) ** 2 + (v / sigma_y) ** 2)
    w = np.exp(log_w)
    return Kernel(w / w.sum())


def make_motion_kernel(size: int, seed: int, intensity: float) -> Kernel:
    """Random camera-shake kernel from a continuous trajectory.

    The trajectory is a velocity random walk (Gaussian jitter plus a pull back
    toward the path centroid, both scaled by ``intensity``) rasterized onto the
    grid by sub-pixel bilinear splatting. Deterministic per seed; intensity 0
    degenerates to a discrete delta.
    """
    if size % 2 == 0:
        raise OperatorError(f"kernel size must be odd, got {size}")
    if not 0.0 <= intensity <= 1.0:
        raise OperatorError(f"intensity must be in [0, 1], got {intensity}")
    rng = np.random.default_rng(seed)
    half = (size - 1) / 2.0
    jitter = intensity * max(half, 1.0) * MOTION_JITTER_FRACTION
    pos = np.zeros(MOTION_SUBSTEPS + 1, dtype=complex)
    vel = 0j
    for i in range(MOTION_SUBSTEPS):
        shove = jitter * complex(rng.standard_normal(), rng.standard_normal())
        vel = MOTION_VELOCITY_PERSISTENCE * vel + shove - MOTION_CENTROID_PULL * intensity * pos[i]
        pos[i + 1] = pos[i] + vel
    pos -= pos.mean()
    extent = max(np.abs(pos.real).max(), np.abs(pos.imag).max())
    if extent > half:
        pos *= half / extent if half > 0 else 0.0
    grid = np.zeros((size, size))
    xs = pos.real + half
    ys = pos.imag + half
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    for dy_c, dx_c, wt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + dy_c
        xx = x0 + dx_c
        inside = (yy >= 0) & (yy < size) & (xx >= 0) & (xx < size)
        np.add.at(grid, (yy[inside], xx[inside]), wt[inside])
    return Kernel(grid / grid.sum())


def _embed_kernel(kernel: Kernel, height: int, width: int) -> np.ndarray:
    """Wrap a centered kernel onto the (height, width) circular grid at offset 0."""
    half = kernel.size // 2
    embedded = np.zeros((height, width))
    offsets = np.arange(-half, half + 1)
    rows = np.mod(offsets, height)
    cols = np.mod(offsets, width)
    np.add.at(embedded, (rows[:, None], cols[None, :]), kernel.weights)
    return embedded


class DegradationOperator:
    """Per-frame degradation y = (h_n * x)↓s with optional noise and codec stage.

    Kernels may be shared (length 1) or per frame (length N). The correction
    spectrum for the pseudo-inverse is precomputed at construction; instances
    are immutable and safe to share.
    """

    def __init__(
        self,
        frame_shape: tuple[int, int],
        kernels: tuple[Kernel, ...] | list[Kernel] = (),
        scale: int = 1,
        sigma_e: float = 0.0,
        jpeg_quality: int | None = None,
    ):
        height, width = frame_shape
        if scale < 1:
            raise OperatorError(f"decimation factor must be >= 1, got {scale}")
        if height % scale or width % scale:
            raise OperatorError(
                f"decimation factor {scale} does not divide frame shape {frame_shape}"
            )
        if sigma_e < 0:
            raise OperatorError(f"noise level must be >= 0, got {sigma_e}")
        kernels = tuple(kernels) or (delta_kernel(),)
        self.kernels = kernels
        self.scale = int(scale)
        self.sigma_e = float(sigma_e)
        self.codec = JpegCodec(jpeg_quality) if jpeg_quality is not None else None
        self.in_frame_shape = (height, width)
        self.out_frame_shape = (height // scale, width // scale)
        self._otf = tuple(np.fft.fft2(_embed_kernel(k, height, width)) for k in kernels)
        self._correction = tuple(self._correction_spectrum(otf) for otf in self._otf)
        self.regularized_bins = sum(int(c_zeros) for _, c_zeros in self._correction)

    def _correction_spectrum(self, otf: np.ndarray) -> tuple[np.ndarray, int]:
        gram = (otf * np.conj(otf)).real  # spectrum of h * mirrored(h) on the fine grid
        auto = np.fft.ifft2(gram).real
        decimated = auto[:: self.scale, :: self.scale]
        spec = np.fft.fft2(decimated)
        magnitude = np.abs(spec)
        alive = magnitude > PINV_RELATIVE_THRESHOLD * magnitude.max()
        if not alive.any():
            raise OperatorError("correction spectrum fully degenerate")
        correction = np.where(alive, 1.0 / np.where(alive, spec, 1.0), 0.0)
        return correction, int((~alive).sum())

    @property
    def is_regularized(self) -> bool:
        """True when some spectrum bins were zeroed as rank-deficient."""
        return self.regularized_bins > 0

    def _kernel_index(self, frame: int, num_frames: int) -> int:
        if len(self.kernels) == 1:
            return 0
        if len(self.kernels) != num_frames:
            raise OperatorError(
                f"{len(self.kernels)} kernels cannot cover {num_frames} frames"
            )
        return frame

    def _check_input(self, x: VideoTensor) -> None:
        if (x.height, x.width) != self.in_frame_shape:
            raise OperatorError(
                f"frame shape {(x.height, x.width)} does not match operator input {self.in_frame_shape}"
            )

    def _check_output(self, y: VideoTensor) -> None:
        if (y.height, y.width) != self.out_frame_shape:
            raise OperatorError(
                f"frame shape {(y.height, y.width)} does not match operator output {self.out_frame_shape}"
            )

    def apply(self, x: VideoTensor, noise_seed: int | None = None) -> VideoTensor:
        """Blur, decimate, then (when a seed is given) add noise, then transcode."""
        self._check_input(x)
        s = self.scale
        out = np.empty((x.num_frames, *self.out_frame_shape, x.channels))
        for n in range(x.num_frames):
            otf = self._otf[self._kernel_index(n, x.num_frames)]
            blurred = np.fft.ifft2(np.fft.fft2(x.data[n], axes=(0, 1)) * otf[:, :, None], axes=(0, 1)).real
            out[n] = blurred[::s, ::s]
        if noise_seed is not None and self.sigma_e > 0:
            rng = np.random.default_rng(noise_seed)
            out = out + self.sigma_e * rng.standard_normal(out.shape)
        if self.codec is not None:
            for n in range(out.shape[0]):
                for c in range(out.shape[3]):
                    out[n, :, :, c] = self.codec.transcode(out[n, :, :, c])
        return VideoTensor(out, unclamped=True)

    def adjoint(self, y: VideoTensor) -> VideoTensor:
        """Exact adjoint of the noiseless linear part: zero-fill then correlate."""
        self._check_output(y)
        s = self.scale
        height, width = self.in_frame_shape
        out = np.empty((y.num_frames, height, width, y.channels))
        for n in range(y.num_frames):
            otf = self._otf[self._kernel_index(n, y.num_frames)]
            up = np.zeros((height, width, y.channels))
            up[::s, ::s] = y.data[n]
            out[n] = np.fft.ifft2(np.fft.fft2(up, axes=(0, 1)) * np.conj(otf)[:, :, None], axes=(0, 1)).real
        return VideoTensor(out, unclamped=True)

    def pseudo_apply(self, r: VideoTensor) -> VideoTensor:
        """Moore-Penrose pseudo-inverse of the noiseless linear part.

        Realized per frame as: correction filter on the low-resolution grid,
        zero-fill upsampling, then convolution with the mirrored kernel.
        """
        self._check_output(r)
        s = self.scale
        height, width = self.in_frame_shape
        out = np.empty((r.num_frames, height, width, r.channels))
        for n in range(r.num_frames):
            idx = self._kernel_index(n, r.num_frames)
            correction, _ = self._correction[idx]
            corrected = np.fft.ifft2(
                np.fft.fft2(r.data[n], axes=(0, 1)) * correction[:, :, None], axes=(0, 1)
            ).real
            up = np.zeros((height, width, r.channels))
            up[::s, ::s] = corrected
            out[n] = np.fft.ifft2(
                np.fft.fft2(up, axes=(0, 1)) * np.conj(self._otf[idx])[:, :, None], axes=(0, 1)
            ).real
        return VideoTensor(out, unclamped=True)


class ComposedOperator:
    """Chain of operators: stages apply in list order, pseudo-inverses in reverse."""

    def __init__(self, stages):
        stages = list(stages)
        if not stages:
            raise OperatorError("cannot compose an empty operator list")
        for first, second in zip(stages, stages[1:]):
            if first.out_frame_shape != second.in_frame_shape:
                raise OperatorError(
                    f"incompatible chain dims: stage output {first.out_frame_shape} "
                    f"!= next stage input {second.in_frame_shape}"
                )
        self.stages = stages
        self.in_frame_shape = stages[0].in_frame_shape
        self.out_frame_shape = stages[-1].out_frame_shape

    @property
    def is_regularized(self) -> bool:
        return any(stage.is_regularized for stage in self.stages)

    def apply(self, x: VideoTensor, noise_seed: int | None = None) -> VideoTensor:
        for i, stage in enumerate(self.stages):
            seed = None if noise_seed is None else noise_seed + i
            x = stage.apply(x, noise_seed=seed)
        return x

    def adjoint(self, y: VideoTensor) -> VideoTensor:
        for stage in reversed(self.stages):
            y = stage.adjoint(y)
        return y

    def pseudo_apply(self, r: VideoTensor) -> VideoTensor:
        for stage in reversed(self.stages):
            r = stage.pseudo_apply(r)
        return r


class JpegOperator:
    """Codec stage for operator chains.

    The forward map stores measurements decoded, so on the pixel domain the
    decoder contribution to the chained pseudo-inverse is the identity on
    already-decoded residuals; ``adjoint`` likewise passes through (the stage
    is non-linear and close to a copy at high quality).
    """

    def __init__(self, frame_shape: tuple[int, int], quality: int):
        self.codec = JpegCodec(quality)
        self.quality = int(quality)
        self.in_frame_shape = tuple(frame_shape)
        self.out_frame_shape = tuple(frame_shape)
        self.sigma_e = 0.0

    @property
    def is_regularized(self) -> bool:
        return False

    def apply(self, x: VideoTensor, noise_seed: int | None = None) -> VideoTensor:
        del noise_seed
        out = np.empty_like(x.data)
        for n in range(x.num_frames):
            for c in range(x.channels):
                out[n, :, :, c] = self.codec.transcode(x.data[n, :, :, c])
        return VideoTensor(out, unclamped=True)

    def adjoint(self, y: VideoTensor) -> VideoTensor:
        return y

    def pseudo_apply(self, r: VideoTensor) -> VideoTensor:
        return r


def compose(ops) -> ComposedOperator:
    """Compose operators; apply chains forward in order, pseudo-inverses reverse."""
    flattened = []
    for op in ops:
        if isinstance(op, ComposedOperator):
            flattened.extend(op.stages)
        else:
            flattened.append(op)
    return ComposedOperator(flattened)


def add_noise(v: VideoTensor, sigma: float, seed: int) -> VideoTensor:
    """Add white Gaussian noise with standard deviation sigma, deterministic per seed."""
    if sigma < 0:
        raise OperatorError(f"noise level must be >= 0, got {sigma}")
    if sigma == 0:
        return v
    rng = np.random.default_rng(seed)
    return VideoTensor(v.data + sigma * rng.standard_normal(v.shape), unclamped=True)


def read_kernel(path) -> Kernel:
    """Read the plain-text kernel format: first line k, then k rows of k reals."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise OperatorError(f"{path}: empty kernel file")
    try:
        k = int(lines[0])
    except ValueError as exc:
        raise OperatorError(f"{path}: first line must be the kernel size") from exc
    if len(lines) != k + 1:
        raise OperatorError(f"{path}: expected {k} rows, got {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        row = [float(tok) for tok in ln.split()]
        if len(row) != k:
            raise OperatorError(f"{path}: expected {k} values per row, got {len(row)}")
        rows.append(row)
    return Kernel(np.array(rows))


def write_kernel(kernel: Kernel, path) -> None:
    lines = [str(kernel.size)]
    for row in kernel.weights:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
