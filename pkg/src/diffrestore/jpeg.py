"""Block-DCT quantization codec used as the non-linear degradation stage.

The codec works on single-channel frames in model range [-1, 1]; multi-channel
frames are handled channel by channel by the callers. Pixels are mapped to the
8-bit scale, split into 8x8 blocks (reflect-padded when needed), transformed
with an orthonormal DCT-II, and divided by a quality-scaled quantization table.
The coefficient stream is the raw array of rounded integers: entropy coding is
invertible and plays no role in the operator algebra. Decoding never clamps,
so encode(decode(encode(x))) reproduces the coefficient stream bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

# Standard luminance quantization table (8x8, quality 50 base).
BASE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

BLOCK = 8


def quantization_table(quality: int) -> np.ndarray:
    """Scale the base table by the quality factor; Q=100 gives all ones."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    table = (BASE_TABLE * scale + 50) // 100
    return np.clip(table, 1, 255).astype(np.int64)


@dataclass(frozen=True)
class JpegStream:
    """Quantized coefficient stream plus the original frame geometry."""

    height: int
    width: int
    quality: int
    coefficients: np.ndarray  # int64, padded shape (Hp, Wp), block layout in place

    def __eq__(self, other) -> bool:
        if not isinstance(other, JpegStream):
            return NotImplemented
        return (
            self.height == other.height
            and self.width == other.width
            and self.quality == other.quality
            and self.coefficients.shape == other.coefficients.shape
            and bool(np.array_equal(self.coefficients, other.coefficients))
        )


class JpegCodec:
    """Encode/decode surrogate with quality-scaled quantization.

    ``decode`` inverts the quantized coefficients without re-quantizing or
    clamping, which makes it the codec analogue of a pseudo-inverse:
    re-encoding a decoded frame reproduces the same coefficient stream.
    """

    def __init__(self, quality: int):
        self.quality = int(quality)
        self.table = quantization_table(self.quality)

    def encode(self, frame: np.ndarray) -> JpegStream:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.ndim != 2:
            raise ValueError(f"encode expects a single-channel frame, got shape {frame.shape}")
        h, w = frame.shape
        pixels = (frame + 1.0) * 127.5 - 128.0
        pixels = _pad_reflect(pixels)
        blocks = _to_blocks(pixels)
        coeff = scipy.fft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
        quantized = np.rint(coeff / self.table).astype(np.int64)
        return JpegStream(h, w, self.quality, _from_blocks(quantized))

    def decode(self, stream: JpegStream) -> np.ndarray:
        if stream.quality != self.quality:
            raise ValueError(
                f"stream quality {stream.quality} does not match codec quality {self.quality}"
            )
        blocks = _to_blocks(stream.coefficients.astype(np.float64)) * self.table
        pixels = scipy.fft.idctn(blocks, type=2, norm="ortho", axes=(-2, -1))
        pixels = _from_blocks(pixels)[: stream.height, : stream.width]
        return (pixels + 128.0) / 127.5 - 1.0

    def transcode(self, frame: np.ndarray) -> np.ndarray:
        """decode(encode(frame)): the pixel-domain effect of the codec."""
        return self.decode(self.encode(frame))


def jpeg_encode(frame: np.ndarray, quality: int) -> JpegStream:
    return JpegCodec(quality).encode(frame)


def jpeg_decode(stream: JpegStream) -> np.ndarray:
    return JpegCodec(stream.quality).decode(stream)


def _pad_reflect(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    if pad_h or pad_w:
        # edge-inclusive reflection stays valid even for frames narrower than a block
        frame = np.pad(frame, ((0, pad_h), (0, pad_w)), mode="symmetric")
    return frame


def _to_blocks(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    return frame.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    nh, nw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nh * BLOCK, nw * BLOCK)
