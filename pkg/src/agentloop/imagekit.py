"""Raster-image kernels for the distortion generator and the code tool.

All kernels are deterministic, value-clamped to the 8-bit range and, given
identical inputs and seeds, reproduce bit-identical outputs across
platforms. Rounding is half-up (``floor(x + 0.5)``) everywhere; Gaussian
blur uses a separable kernel of radius ``ceil(3 * sigma)``, renormalized to
sum 1, with clamp-to-edge borders, accumulated in ascending offset order in
float64 and rounded once after both passes. Changing any of those choices
breaks golden-image tests and the sandbox backend-equivalence corpus.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable 8-bit RGB raster, row-major."""

    array: np.ndarray

    def __post_init__(self) -> None:
        a = self.array
        if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
            raise ValueError(f"expected uint8 array of shape (h, w, 3), got {a.shape} {a.dtype}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        a.setflags(write=False)

    @property
    def width(self) -> int:
        return self.array.shape[1]

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageBuffer":
        return cls(np.ascontiguousarray(array, dtype=np.uint8).copy())

    @classmethod
    def full(cls, width: int, height: int, rgb: tuple[int, int, int]) -> "ImageBuffer":
        a = np.empty((height, width, 3), dtype=np.uint8)
        a[:, :] = rgb
        return cls(a)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.array.shape == other.array.shape and bool(
            np.array_equal(self.array, other.array)
        )


def load_png(path) -> ImageBuffer:
    """Load a PNG as 8-bit RGB; alpha is stripped, no color management."""
    with Image.open(path) as im:
        return ImageBuffer.from_array(np.asarray(im.convert("RGB")))


def save_png(img: ImageBuffer, path) -> None:
    Image.fromarray(img.array, mode="RGB").save(path, format="PNG")


def png_bytes(img: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.array, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(data)) as im:
        return ImageBuffer.from_array(np.asarray(im.convert("RGB")))


def _round_clamp_u8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(a + 0.5), 0, 255).astype(np.uint8)


def rotate(img: ImageBuffer, quarter_turns: int) -> ImageBuffer:
    """Lossless clockwise rotation by ``quarter_turns`` * 90 degrees."""
    k = quarter_turns % 4
    if k == 0:
        return ImageBuffer(img.array.copy())
    return ImageBuffer(np.ascontiguousarray(np.rot90(img.array, -k)))


def adjust_brightness(img: ImageBuffer, factor: float) -> ImageBuffer:
    if factor < 0:
        raise ValueError(f"brightness factor must be nonnegative, got {factor}")
    return ImageBuffer(_round_clamp_u8(img.array.astype(np.float64) * factor))


def _gaussian_weights(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets * offsets) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _convolve_axis(a: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(weights) - 1) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a, dtype=np.float64)
    n = a.shape[axis]
    index: list = [slice(None)] * a.ndim
    for j in range(2 * radius + 1):
        index[axis] = slice(j, j + n)
        out += weights[j] * padded[tuple(index)]
    return out


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    if sigma <= 0:
        raise ValueError(f"blur sigma must be positive, got {sigma}")
    weights = _gaussian_weights(sigma)
    acc = _convolve_axis(img.array.astype(np.float64), weights, axis=1)
    acc = _convolve_axis(acc, weights, axis=0)
    return ImageBuffer(_round_clamp_u8(acc))


_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64_uniform(seed: int, count: int) -> np.ndarray:
    """``count`` uniforms in [0, 1) from a SplitMix64 counter stream."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _SM64_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def _gaussian_stream(seed: int, count: int) -> np.ndarray:
    """Standard normals via Box-Muller over the SplitMix64 stream.

    Pair 2k consumes uniforms (2k, 2k+1) and yields (cos, sin) in that
    order; the stream layout is part of the determinism contract.
    """
    pairs = (count + 1) // 2
    u = _splitmix64_uniform(seed, 2 * pairs)
    u1 = u[0::2]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(1.0 - u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]


def add_gaussian_noise(img: ImageBuffer, sigma: float, seed: int) -> ImageBuffer:
    if sigma < 0:
        raise ValueError(f"noise sigma must be nonnegative, got {sigma}")
    if sigma == 0:
        return ImageBuffer(img.array.copy())
    noise = _gaussian_stream(seed, img.array.size).reshape(img.array.shape)
    return ImageBuffer(_round_clamp_u8(img.array.astype(np.float64) + sigma * noise))


def crop(img: ImageBuffer, x: int, y: int, w: int, h: int) -> ImageBuffer:
    if w < 1 or h < 1:
        raise ValueError(f"crop size must be at least 1x1, got {w}x{h}")
    if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
        raise ValueError(
            f"crop rectangle ({x}, {y}, {w}, {h}) outside {img.width}x{img.height} image"
        )
    return ImageBuffer(img.array[y : y + h, x : x + w].copy())


def median_denoise(img: ImageBuffer, radius: int = 1) -> ImageBuffer:
    if radius < 1:
        raise ValueError(f"median radius must be at least 1, got {radius}")
    pad = np.pad(img.array, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    h, w = img.height, img.width
    windows = [
        pad[dy : dy + h, dx : dx + w]
        for dy in range(2 * radius + 1)
        for dx in range(2 * radius + 1)
    ]
    stack = np.stack(windows, axis=0)
    # Window size (2r+1)^2 is odd, so the median is an exact sample value.
    return ImageBuffer(np.median(stack, axis=0).astype(np.uint8))


class OpKind(str, Enum):
    ROTATE90 = "rotate90"
    ROTATE180 = "rotate180"
    DARKEN = "darken"
    OVEREXPOSE = "overexpose"
    BLUR = "blur"
    NOISE = "noise"
    NONE = "none"


@dataclass(frozen=True)
class DistortionOp:
    kind: OpKind
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionOp":
        return cls(OpKind(d["kind"]), dict(d.get("params", {})))


@dataclass(frozen=True)
class DistortionSpec:
    ops: tuple[DistortionOp, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.ops) < 1:
            raise ValueError("distortion spec needs at least one op")
        for op in self.ops:
            if op.kind is OpKind.BLUR and op.params.get("sigma", 0) <= 0:
                raise ValueError("blur requires sigma > 0")
            if op.kind is OpKind.NOISE and op.params.get("sigma", -1) < 0:
                raise ValueError("noise requires sigma >= 0")

    def to_dict(self) -> dict:
        return {"ops": [op.to_dict() for op in self.ops], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        return cls(tuple(DistortionOp.from_dict(o) for o in d["ops"]), d.get("seed", 0))


def apply_spec(img: ImageBuffer, spec: DistortionSpec) -> ImageBuffer:
    """Apply ops left to right; noise ops consume the spec seed."""
    out = img
    for op in spec.ops:
        if op.kind is OpKind.ROTATE90:
            out = rotate(out, 1)
        elif op.kind is OpKind.ROTATE180:
            out = rotate(out, 2)
        elif op.kind in (OpKind.DARKEN, OpKind.OVEREXPOSE):
            out = adjust_brightness(out, op.params["factor"])
        elif op.kind is OpKind.BLUR:
            out = gaussian_blur(out, op.params["sigma"])
        elif op.kind is OpKind.NOISE:
            out = add_gaussian_noise(out, op.params["sigma"], spec.seed)
        elif op.kind is OpKind.NONE:
            pass
        else:  # pragma: no cover - enum is closed
            raise ValueError(f"unknown op kind {op.kind}")
    return out
