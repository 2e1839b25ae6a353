"""Length-prefixed JSON frames: 4-byte big-endian size, then UTF-8 JSON."""
from __future__ import annotations

import json
import struct
from typing import BinaryIO

HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 256 * 1024 * 1024


class FrameError(ValueError):
    pass


def read_frame(stream: BinaryIO) -> dict | None:
    """Next frame as a dict, or None on clean EOF."""
    header = stream.read(HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise FrameError("truncated frame header")
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {length} bytes exceeds the limit")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise FrameError("stream closed mid-frame")
        payload += chunk
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FrameError("frame payload must be a JSON object")
    return obj


def write_frame(stream: BinaryIO, obj: dict) -> None:
    payload = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    stream.write(HEADER.pack(len(payload)) + payload)
    stream.flush()
