"""Deterministic image kernels for verb scripts.

Numeric contract (shared with the client's built-in interpreter, which
must stay bit-compatible): half-up rounding via floor(x + 0.5); Gaussian
blur with radius ceil(3 * sigma), weights exp(-j^2 / (2 sigma^2))
normalized to sum 1, clamp-to-edge borders, horizontal pass then vertical
pass accumulated in ascending offset order in float64, rounded once at
the end; median over the odd-sized (2r+1)^2 clamp-to-edge window.
"""
from __future__ import annotations

import math

import numpy as np


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def check_image(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError("images must be uint8 arrays of shape (h, w, 3)")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("images must be at least 1x1")
    return arr


def rotate_cw(arr: np.ndarray, degrees: int) -> np.ndarray:
    if degrees % 90 != 0:
        raise ValueError("rotation must be a multiple of 90 degrees")
    turns = (degrees // 90) % 4
    if turns == 0:
        return arr.copy()
    return np.ascontiguousarray(np.rot90(arr, -turns))


def crop_rect(arr: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    height, width = arr.shape[:2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValueError(f"crop rectangle ({x}, {y}, {w}, {h}) outside {width}x{height} image")
    return arr[y : y + h, x : x + w].copy()


def scale_brightness(arr: np.ndarray, factor: float) -> np.ndarray:
    if factor < 0:
        raise ValueError("brightness factor must be nonnegative")
    return _to_u8(arr.astype(np.float64) * factor)


def _axis_pass(values: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(weights) - 1) // 2
    pad_spec = [(0, 0), (0, 0), (0, 0)]
    pad_spec[axis] = (radius, radius)
    padded = np.pad(values, pad_spec, mode="edge")
    result = np.zeros(values.shape, dtype=np.float64)
    span = values.shape[axis]
    for offset in range(2 * radius + 1):
        window = [slice(None), slice(None), slice(None)]
        window[axis] = slice(offset, offset + span)
        result += weights[offset] * padded[tuple(window)]
    return result


def blur_gaussian(arr: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("blur sigma must be positive")
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets * offsets) / (2.0 * sigma * sigma))
    weights = weights / weights.sum()
    blurred = _axis_pass(arr.astype(np.float64), weights, axis=1)
    blurred = _axis_pass(blurred, weights, axis=0)
    return _to_u8(blurred)


def median_filter(arr: np.ndarray, radius: int) -> np.ndarray:
    if radius < 1:
        raise ValueError("median radius must be at least 1")
    padded = np.pad(arr, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    h, w = arr.shape[:2]
    side = 2 * radius + 1
    windows = np.stack(
        [padded[dy : dy + h, dx : dx + w] for dy in range(side) for dx in range(side)],
        axis=0,
    )
    return np.median(windows, axis=0).astype(np.uint8)


VERBS = {"rotate": 1, "crop": 4, "brightness": 1, "blur": 1, "denoise": (0, 1), "save": 1}


class VerbScriptError(ValueError):
    pass


def parse_verbs(code: str) -> list[tuple[str, tuple]]:
    parsed: list[tuple[str, tuple]] = []
    for lineno, raw in enumerate(code.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        name, *args = line.split()
        if name not in VERBS:
            raise VerbScriptError(f"line {lineno}: unknown verb {name!r}")
        arity = VERBS[name]
        allowed = arity if isinstance(arity, tuple) else (arity,)
        if len(args) not in allowed:
            raise VerbScriptError(f"line {lineno}: verb {name!r} takes {arity} argument(s)")
        try:
            if name == "rotate":
                deg = int(args[0])
                if deg not in (90, 180, 270):
                    raise ValueError(f"rotate expects 90, 180 or 270, got {deg}")
                parsed.append((name, (deg,)))
            elif name == "crop":
                parsed.append((name, tuple(int(a) for a in args)))
            elif name in ("brightness", "blur"):
                parsed.append((name, (float(args[0]),)))
            elif name == "denoise":
                parsed.append((name, (int(args[0]) if args else 1,)))
            else:
                parsed.append((name, (args[0],)))
        except ValueError as exc:
            raise VerbScriptError(f"line {lineno}: {exc}") from None
    if not parsed:
        raise VerbScriptError("empty script")
    return parsed


def run_verb_script(code: str, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    verbs = parse_verbs(code)
    if len(inputs) == 1:
        current = next(iter(inputs.values()))
    elif "image" in inputs:
        current = inputs["image"]
    else:
        raise VerbScriptError(
            f"ambiguous input: expected one image or one named 'image', got {sorted(inputs)}"
        )
    saved: dict[str, np.ndarray] = {}
    for name, args in verbs:
        if name == "rotate":
            current = rotate_cw(current, args[0])
        elif name == "crop":
            current = crop_rect(current, *args)
        elif name == "brightness":
            current = scale_brightness(current, args[0])
        elif name == "blur":
            current = blur_gaussian(current, args[0])
        elif name == "denoise":
            current = median_filter(current, args[0])
        else:
            saved[args[0]] = current
    return saved
