"""Pluggable noise predictors and spatial enhancers.

A denoiser backend is a callable ``(x_t, cond, t) -> eps_hat`` where ``cond``
is the conditioning tensor or ``None`` for an unconditional prediction (the
null-condition flag). An enhancer backend is a callable ``(x) -> enhanced``.
Analytic backends are pure and thread-safe; a subprocess backend serializes
calls to its child, so concurrent restorations need distinct instances.
"""

from __future__ import annotations

import struct
import subprocess

import numpy as np

from .schedule import NoiseSchedule
from .video import VideoTensor

DENOISER_REQUEST_MAGIC = b"FLDN"
DENOISER_RESPONSE_MAGIC = b"FLEP"
ENHANCER_REQUEST_MAGIC = b"FLEN"
ENHANCER_RESPONSE_MAGIC = b"FLEO"

_REQUEST_HEADER = struct.Struct("<4sQIBIIII")
_RESPONSE_HEADER = struct.Struct("<4sQ")


class BackendError(RuntimeError):
    """A backend failed to produce a prediction."""


def gaussian_smooth(data: np.ndarray, radius: float) -> np.ndarray:
    """Gaussian smoothing over the spatial axes with circular boundaries.

    Realized spectrally (periodic Gaussian transfer function), so cost is
    independent of the radius and the boundary handling matches the circular
    convention of the operator algebra.
    """
    if radius <= 0:
        return data
    _, h, w, _ = data.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    transfer = np.exp(-2.0 * np.pi**2 * radius**2 * (fy**2 + fx**2))
    spectrum = np.fft.fft2(data, axes=(1, 2)) * transfer[None, :, :, None]
    return np.fft.ifft2(spectrum, axes=(1, 2)).real


class OracleDenoiser:
    """Returns the exact noise implied by a known clean sequence.

    Inverts the forward marginal: eps = (x_t - sqrt(ab_t) * truth) / sqrt(1 - ab_t).
    Test-only construct; lets the sampler be exercised with a perfect predictor.
    """

    def __init__(self, truth: VideoTensor, schedule: NoiseSchedule):
        self.truth = truth
        self.schedule = schedule

    def __call__(self, x_t: VideoTensor, cond: VideoTensor | None, t: int) -> VideoTensor:
        del cond
        if x_t.shape != self.truth.shape:
            raise BackendError(
                f"state shape {x_t.shape} does not match truth shape {self.truth.shape}"
            )
        ab = self.schedule.alpha_bar(t)
        eps = (x_t.data - np.sqrt(ab) * self.truth.data) / np.sqrt(1.0 - ab)
        return VideoTensor(eps, unclamped=True)


class ZeroDenoiser:
    """Predicts zero noise everywhere."""

    def __call__(self, x_t: VideoTensor, cond: VideoTensor | None, t: int) -> VideoTensor:
        del cond, t
        return VideoTensor(np.zeros(x_t.shape), unclamped=True)


class ShrinkageDenoiser:
    """Analytic stand-in for a trained noise predictor.

    Estimates the clean signal by Gaussian-smoothing the rescaled state with a
    radius of ``strength * sqrt(1 - ab_t) / sqrt(ab_t)`` pixels, then returns
    the noise that estimate implies. The radius shrinks as t -> 0, so late
    steps preserve detail while early steps average heavily.
    """

    def __init__(self, strength: float, schedule: NoiseSchedule):
        if strength < 0:
            raise ValueError(f"strength must be >= 0, got {strength}")
        self.strength = float(strength)
        self.schedule = schedule

    def __call__(self, x_t: VideoTensor, cond: VideoTensor | None, t: int) -> VideoTensor:
        del cond
        ab = self.schedule.alpha_bar(t)
        rescaled = x_t.data / np.sqrt(ab)
        radius = self.strength * np.sqrt(1.0 - ab) / np.sqrt(ab)
        x0_hat = gaussian_smooth(rescaled, radius)
        eps = (x_t.data - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
        return VideoTensor(eps, unclamped=True)


class IdentityEnhancer:
    """Returns the input bit-exactly."""

    def __call__(self, x: VideoTensor) -> VideoTensor:
        return x


class UnsharpEnhancer:
    """Sharpen by adding back the high-pass residual: x + amount * (x - smooth(x))."""

    def __init__(self, amount: float, radius: float):
        if amount < 0:
            raise ValueError(f"amount must be >= 0, got {amount}")
        if radius <= 0:
            raise ValueError(f"radius must be > 0, got {radius}")
        self.amount = float(amount)
        self.radius = float(radius)

    def __call__(self, x: VideoTensor) -> VideoTensor:
        smoothed = gaussian_smooth(x.data, self.radius)
        enhanced = x.data + self.amount * (x.data - smoothed)
        return VideoTensor(np.clip(enhanced, -1.0, 1.0))


class _SubprocessChannel:
    """Framed binary exchange with a child process over stdin/stdout."""

    def __init__(self, command: str, request_magic: bytes, response_magic: bytes):
        self.command = command
        self.request_magic = request_magic
        self.response_magic = response_magic
        self.request_id = 0
        try:
            self.child = subprocess.Popen(
                command,
                shell=True,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise BackendError(f"cannot spawn backend {command!r}: {exc}") from exc

    def round_trip(self, t: int, null_condition: bool, tensors: list[np.ndarray]) -> np.ndarray:
        self.request_id += 1
        rid = self.request_id
        n, h, w, c = tensors[0].shape
        header = _REQUEST_HEADER.pack(
            self.request_magic, rid, t, 1 if null_condition else 0, n, h, w, c
        )
        payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors)
        try:
            self.child.stdin.write(header + payload)
            self.child.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BackendError(f"backend write failed (request {rid}): {exc}") from exc
        expected = _RESPONSE_HEADER.size + 4 * n * h * w * c
        raw = self._read_exact(expected, rid)
        magic, got_rid = _RESPONSE_HEADER.unpack_from(raw)
        if magic != self.response_magic:
            raise BackendError(f"protocol violation (request {rid}): bad magic {magic!r}")
        if got_rid != rid:
            raise BackendError(
                f"protocol violation (request {rid}): response carries id {got_rid}"
            )
        out = np.frombuffer(raw, dtype="<f4", count=n * h * w * c, offset=_RESPONSE_HEADER.size)
        return out.reshape(n, h, w, c).astype(np.float64)

    def _read_exact(self, count: int, rid: int) -> bytes:
        chunks = []
        remaining = count
        while remaining:
            chunk = self.child.stdout.read(remaining)
            if not chunk:
                code = self.child.poll()
                raise BackendError(
                    f"backend stream closed mid-response (request {rid}, exit code {code})"
                )
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        if self.child.poll() is None:
            self.child.stdin.close()
            self.child.wait(timeout=5)


class SubprocessDenoiser:
    """Noise predictor living in a child process, one request per call.

    Request:  "FLDN" | request-id u64 | t u32 | null-condition u8 |
              N,H,W,C u32 x4 | x_t payload f32 | c payload f32.
    Response: "FLEP" | request-id u64 | eps payload f32.
    The c payload is zero-filled when the null-condition flag is set.
    """

    def __init__(self, command: str):
        self.channel = _SubprocessChannel(command, DENOISER_REQUEST_MAGIC, DENOISER_RESPONSE_MAGIC)

    def __call__(self, x_t: VideoTensor, cond: VideoTensor | None, t: int) -> VideoTensor:
        null_condition = cond is None
        c_payload = np.zeros(x_t.shape) if null_condition else cond.data
        if not null_condition and cond.shape != x_t.shape:
            raise BackendError(
                f"condition shape {cond.shape} does not match state shape {x_t.shape}"
            )
        eps = self.channel.round_trip(t, null_condition, [x_t.data, c_payload])
        if not np.all(np.isfinite(eps)):
            raise BackendError("backend returned non-finite noise prediction")
        return VideoTensor(eps, unclamped=True)

    def close(self) -> None:
        self.channel.close()


class SubprocessEnhancer:
    """Enhancer in a child process; same framing with a single tensor each way.

    Request:  "FLEN" | request-id u64 | t u32 (always 0) | null u8 (always 0) |
              N,H,W,C u32 x4 | x payload f32.
    Response: "FLEO" | request-id u64 | enhanced payload f32.
    """

    def __init__(self, command: str):
        self.channel = _SubprocessChannel(command, ENHANCER_REQUEST_MAGIC, ENHANCER_RESPONSE_MAGIC)

    def __call__(self, x: VideoTensor) -> VideoTensor:
        out = self.channel.round_trip(0, False, [x.data])
        if not np.all(np.isfinite(out)):
            raise BackendError("backend returned non-finite enhancement")
        return VideoTensor(out, unclamped=True)

    def close(self) -> None:
        self.channel.close()


def oracle_denoiser(x0_truth: VideoTensor, schedule: NoiseSchedule) -> OracleDenoiser:
    return OracleDenoiser(x0_truth, schedule)


def shrinkage_denoiser(strength: float, schedule: NoiseSchedule) -> ShrinkageDenoiser:
    return ShrinkageDenoiser(strength, schedule)


def subprocess_denoiser(command: str) -> SubprocessDenoiser:
    return SubprocessDenoiser(command)


def unsharp_enhancer(amount: float, radius: float) -> UnsharpEnhancer:
    return UnsharpEnhancer(amount, radius)
