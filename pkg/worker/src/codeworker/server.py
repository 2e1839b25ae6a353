"""Request loop: one response frame per request frame until stdin closes."""
from __future__ import annotations

import base64
import io
import sys

import numpy as np
from PIL import Image

from . import runtime
from .framing import FrameError, read_frame, write_frame

DEFAULT_WALL_TIME = 10.0
DEFAULT_MEMORY = 512 * 1024 * 1024


def _decode_images(payload: dict) -> dict[str, np.ndarray]:
    images = {}
    for name, b64 in payload.items():
        raw = base64.b64decode(b64, validate=True)
        with Image.open(io.BytesIO(raw)) as im:
            images[str(name)] = np.ascontiguousarray(np.asarray(im.convert("RGB")))
    return images


def _encode_images(images: dict[str, np.ndarray]) -> dict[str, str]:
    encoded = {}
    for name, arr in images.items():
        buf = io.BytesIO()
        Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
        encoded[name] = base64.b64encode(buf.getvalue()).decode("ascii")
    return encoded


def handle_request(request: dict) -> dict:
    request_id = request.get("id")
    try:
        code = request["code"]
        if not isinstance(code, str) or not code:
            raise ValueError("request field 'code' must be a non-empty string")
        images = _decode_images(request.get("images", {}) or {})
        limits = request.get("limits", {}) or {}
        wall_time = float(limits.get("wall_time", DEFAULT_WALL_TIME))
        memory = int(limits.get("memory", DEFAULT_MEMORY))
    except Exception as exc:  # malformed request, not an execution failure
        return {
            "id": request_id,
            "status": "protocol_error",
            "stdout": "",
            "stderr": f"malformed request: {exc}",
            "images": {},
        }
    result = runtime.run_user_code(code, images, wall_time=wall_time, memory=memory)
    return {
        "id": request_id,
        "status": result["status"],
        "stdout": result["stdout"],
        "stderr": result["stderr"],
        "images": _encode_images(result["images"]),
    }


def serve(stdin=None, stdout=None) -> int:
    """Run until EOF on stdin. Internal faults produce protocol_error
    responses; the loop itself never raises."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        try:
            request = read_frame(stdin)
        except FrameError as exc:
            write_frame(
                stdout,
                {"id": None, "status": "protocol_error", "stdout": "",
                 "stderr": str(exc), "images": {}},
            )
            continue
        if request is None:
            return 0
        try:
            response = handle_request(request)
        except Exception as exc:  # pragma: no cover - last-resort guard
            response = {
                "id": request.get("id"), "status": "protocol_error",
                "stdout": "", "stderr": f"internal worker fault: {exc}", "images": {},
            }
        write_frame(stdout, response)


def main() -> int:
    return serve()


if __name__ == "__main__":
    sys.exit(main())
