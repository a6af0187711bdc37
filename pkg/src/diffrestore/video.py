"""Frame-sequence tensors, value-range conventions, and bit-exact file IO.

Every signal in this package travels as a :class:`VideoTensor`: an
``N x H x W x C`` float64 array in the model range ``[-1, 1]``. Intermediate
diffusion states may leave that range; they carry ``unclamped=True`` and are
clamped exactly once at the output boundary.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

_VTEN_MAGIC = b"VTEN"
_VTEN_VERSION = 1
_VTEN_HEADER = struct.Struct("<4sIIIII")

_FLOW_MAGIC = b"FLOW"
_FLOW_HEADER = struct.Struct("<4sIII")

_FRAME_RE = re.compile(r"frame_(\d{5})\.png$")


class VideoIOError(RuntimeError):
    """A video or flow file could not be read or written."""


@dataclass(frozen=True)
class VideoTensor:
    """Immutable N x H x W x C frame sequence in model range [-1, 1].

    ``unclamped`` marks intermediate states (diffusion iterates, residuals)
    that are allowed to leave the model range. All values must be finite.
    """

    data: np.ndarray
    unclamped: bool = False

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 4:
            raise ValueError(f"expected (N, H, W, C) data, got shape {arr.shape}")
        if arr.shape[3] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {arr.shape[3]}")
        if arr.size == 0:
            raise ValueError("video tensor must contain at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("video data contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacements from frame n to frame n+1, with a validity mask.

    ``flow`` has shape (N-1, H, W, 2) holding (u, v) pixel displacements;
    ``valid`` has shape (N-1, H, W) and marks pixels whose warped source
    lies inside the frame.
    """

    flow: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        flow = np.array(self.flow, dtype=np.float64, copy=True)
        valid = np.array(self.valid, dtype=bool, copy=True)
        if flow.ndim != 4 or flow.shape[3] != 2:
            raise ValueError(f"expected (N-1, H, W, 2) flow, got shape {flow.shape}")
        if valid.shape != flow.shape[:3]:
            raise ValueError(
                f"validity mask shape {valid.shape} does not match flow {flow.shape[:3]}"
            )
        if not np.all(np.isfinite(flow)):
            raise ValueError("flow contains NaN or Inf")
        flow.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "valid", valid)

    @property
    def num_pairs(self) -> int:
        return self.flow.shape[0]


def clamp_model_range(v: VideoTensor) -> VideoTensor:
    """Clamp every value to [-1, 1]. Idempotent."""
    return VideoTensor(np.clip(v.data, -1.0, 1.0))


def _byte_to_model(px: np.ndarray) -> np.ndarray:
    return px.astype(np.float64) / 127.5 - 1.0


def _model_to_byte(v: np.ndarray) -> np.ndarray:
    # round-half-up, fixed so png output is bit-deterministic
    x = (np.clip(v, -1.0, 1.0) + 1.0) * 127.5
    return np.floor(x + 0.5).astype(np.uint8)


def read_video(path: str | Path, format: str = "vten") -> VideoTensor:
    """Read a frame sequence from a ``vten`` file or a png-sequence directory."""
    path = Path(path)
    if format == "vten":
        return _read_vten(path)
    if format == "png-sequence":
        return _read_png_sequence(path)
    raise ValueError(f"unknown video format {format!r}")


def write_video(v: VideoTensor, path: str | Path, format: str = "vten") -> None:
    """Write a frame sequence. ``vten`` output is bit-deterministic."""
    path = Path(path)
    if format == "vten":
        _write_vten(v, path)
    elif format == "png-sequence":
        _write_png_sequence(v, path)
    else:
        raise ValueError(f"unknown video format {format!r}")


def _read_vten(path: Path) -> VideoTensor:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise VideoIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _VTEN_HEADER.size:
        raise VideoIOError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, h, w, c = _VTEN_HEADER.unpack_from(raw)
    if magic != _VTEN_MAGIC:
        raise VideoIOError(f"{path}: bad magic {magic!r}")
    if version != _VTEN_VERSION:
        raise VideoIOError(f"{path}: unsupported version {version}")
    count = n * h * w * c
    expected = _VTEN_HEADER.size + 8 * count
    if len(raw) != expected:
        raise VideoIOError(
            f"{path}: payload size mismatch (header implies {expected} bytes, file has {len(raw)})"
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=_VTEN_HEADER.size)
    data = data.reshape(n, h, w, c)
    if not np.all(np.isfinite(data)):
        raise VideoIOError(f"{path}: non-finite payload")
    try:
        return VideoTensor(data, unclamped=True)
    except ValueError as exc:
        raise VideoIOError(f"{path}: {exc}") from exc


def _write_vten(v: VideoTensor, path: Path) -> None:
    header = _VTEN_HEADER.pack(
        _VTEN_MAGIC, _VTEN_VERSION, v.num_frames, v.height, v.width, v.channels
    )
    payload = np.ascontiguousarray(v.data, dtype="<f8").tobytes()
    try:
        path.write_bytes(header + payload)
    except OSError as exc:
        raise VideoIOError(f"cannot write {path}: {exc}") from exc


def _read_png_sequence(directory: Path) -> VideoTensor:
    if not directory.is_dir():
        raise VideoIOError(f"{directory}: not a directory of png frames")
    frames = sorted(p for p in directory.iterdir() if _FRAME_RE.search(p.name))
    if not frames:
        raise VideoIOError(f"{directory}: no frame_*.png files found")
    arrays = []
    for frame_path in frames:
        try:
            with Image.open(frame_path) as im:
                arr = np.asarray(im)
        except OSError as exc:
            raise VideoIOError(f"cannot read {frame_path}: {exc}") from exc
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise VideoIOError(f"{frame_path}: expected 8-bit grayscale or RGB")
        arrays.append(arr)
        if arrays[0].shape != arr.shape:
            raise VideoIOError(
                f"{frame_path}: frame shape {arr.shape} differs from first frame {arrays[0].shape}"
            )
    stack = np.stack(arrays)
    return VideoTensor(_byte_to_model(stack))


def _write_png_sequence(v: VideoTensor, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    data = _model_to_byte(v.data)
    for n in range(v.num_frames):
        frame = data[n, :, :, 0] if v.channels == 1 else data[n]
        mode = "L" if v.channels == 1 else "RGB"
        frame_path = directory / f"frame_{n:05d}.png"
        try:
            Image.fromarray(frame, mode=mode).save(frame_path)
        except OSError as exc:
            raise VideoIOError(f"cannot write {frame_path}: {exc}") from exc


def read_flow(path: str | Path) -> FlowField:
    """Read a flow file: FLOW | N-1 u32 | H u32 | W u32 | (u,v) f32 pairs | validity bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise VideoIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _FLOW_HEADER.size:
        raise VideoIOError(f"{path}: truncated header")
    magic, pairs, h, w = _FLOW_HEADER.unpack_from(raw)
    if magic != _FLOW_MAGIC:
        raise VideoIOError(f"{path}: bad magic {magic!r}")
    flow_count = pairs * h * w * 2
    valid_count = pairs * h * w
    expected = _FLOW_HEADER.size + 4 * flow_count + valid_count
    if len(raw) != expected:
        raise VideoIOError(
            f"{path}: payload size mismatch (expected {expected} bytes, got {len(raw)})"
        )
    flow = np.frombuffer(raw, dtype="<f4", count=flow_count, offset=_FLOW_HEADER.size)
    flow = flow.reshape(pairs, h, w, 2)
    valid = np.frombuffer(raw, dtype=np.uint8, count=valid_count,
                          offset=_FLOW_HEADER.size + 4 * flow_count)
    valid = valid.reshape(pairs, h, w) != 0
    try:
        return FlowField(flow, valid)
    except ValueError as exc:
        raise VideoIOError(f"{path}: {exc}") from exc


def write_flow(field: FlowField, path: str | Path) -> None:
    path = Path(path)
    pairs, h, w = field.valid.shape
    header = _FLOW_HEADER.pack(_FLOW_MAGIC, pairs, h, w)
    payload = np.ascontiguousarray(field.flow, dtype="<f4").tobytes()
    validity = np.ascontiguousarray(field.valid, dtype=np.uint8).tobytes()
    try:
        path.write_bytes(header + payload + validity)
    except OSError as exc:
        raise VideoIOError(f"cannot write {path}: {exc}") from exc
