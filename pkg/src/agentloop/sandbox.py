"""Code-execution tool: builtin verb interpreter and worker-process client.

Two interchangeable backends sit behind :func:`execute`. The builtin
backend interprets a small deterministic verb script against the in-process
image kernels and needs no subprocess; the worker backend round-trips a
framed JSON protocol over a pooled worker's stdin/stdout and is meant for
free-form untrusted code.

Wire protocol, both directions: a 4-byte big-endian length prefix followed
by that many bytes of UTF-8 JSON. Request objects carry
``{"id", "code", "images": {name: base64 PNG}, "limits": {"wall_time",
"memory"}}``; responses carry ``{"id", "status", "stdout", "stderr",
"images": {name: base64 PNG}}`` with status one of ``ok``,
``runtime_error``, ``timeout``, ``protocol_error``. One request is
outstanding per worker process at a time.
"""
from __future__ import annotations

import base64
import json
import queue
import struct
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from . import imagekit
from .imagekit import ImageBuffer

DEFAULT_WALL_TIME = 10.0
DEFAULT_MEMORY = 512 * 1024 * 1024


class Status(str, Enum):
    OK = "ok"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    PROTOCOL_ERROR = "protocol_error"


@dataclass
class CodeRequest:
    code: str
    input_images: dict[str, ImageBuffer] = field(default_factory=dict)
    wall_time: float = DEFAULT_WALL_TIME
    memory: int = DEFAULT_MEMORY

    def __post_init__(self) -> None:
        if not self.code:
            raise ValueError("code must be non-empty")


@dataclass
class CodeResponse:
    status: Status
    stdout: str = ""
    stderr: str = ""
    output_images: dict[str, ImageBuffer] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


# --- verb scripts -----------------------------------------------------------

VERB_ARITY = {"rotate": 1, "crop": 4, "brightness": 1, "blur": 1, "denoise": (0, 1), "save": 1}


class VerbError(ValueError):
    pass


@dataclass(frozen=True)
class Verb:
    op: str
    args: tuple


def builtin_parse(code: str) -> list[Verb]:
    """Parse a one-verb-per-line script; errors name the offending line."""
    verbs: list[Verb] = []
    saw_any = False
    for lineno, raw in enumerate(code.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        saw_any = True
        parts = line.split()
        op, raw_args = parts[0], parts[1:]
        if op not in VERB_ARITY:
            raise VerbError(f"line {lineno}: unknown verb {op!r}")
        arity = VERB_ARITY[op]
        allowed = arity if isinstance(arity, tuple) else (arity,)
        if len(raw_args) not in allowed:
            raise VerbError(
                f"line {lineno}: verb {op!r} takes {arity} argument(s), got {len(raw_args)}"
            )
        try:
            verbs.append(Verb(op, _coerce_args(op, raw_args)))
        except ValueError as exc:
            raise VerbError(f"line {lineno}: {exc}") from None
    if not saw_any:
        raise VerbError("empty script")
    return verbs


def _coerce_args(op: str, raw: list[str]) -> tuple:
    if op == "rotate":
        deg = int(raw[0])
        if deg not in (90, 180, 270):
            raise ValueError(f"rotate expects 90, 180 or 270, got {deg}")
        return (deg,)
    if op == "crop":
        return tuple(int(a) for a in raw)
    if op == "brightness" or op == "blur":
        return (float(raw[0]),)
    if op == "denoise":
        return (int(raw[0]),) if raw else (1,)
    if op == "save":
        return (raw[0],)
    raise ValueError(f"unknown verb {op!r}")  # pragma: no cover


def is_verb_script(code: str) -> bool:
    try:
        builtin_parse(code)
        return True
    except VerbError:
        return False


def run_verbs(verbs: list[Verb], inputs: dict[str, ImageBuffer]) -> dict[str, ImageBuffer]:
    """Interpret verbs over an implicit current image, collecting saves."""
    if len(inputs) == 1:
        current = next(iter(inputs.values()))
    elif "image" in inputs:
        current = inputs["image"]
    else:
        raise VerbError(
            f"ambiguous input: expected one image or one named 'image', got {sorted(inputs)}"
        )
    outputs: dict[str, ImageBuffer] = {}
    for verb in verbs:
        if verb.op == "rotate":
            current = imagekit.rotate(current, verb.args[0] // 90)
        elif verb.op == "crop":
            current = imagekit.crop(current, *verb.args)
        elif verb.op == "brightness":
            current = imagekit.adjust_brightness(current, verb.args[0])
        elif verb.op == "blur":
            current = imagekit.gaussian_blur(current, verb.args[0])
        elif verb.op == "denoise":
            current = imagekit.median_denoise(current, verb.args[0])
        elif verb.op == "save":
            outputs[verb.args[0]] = current
    return outputs


class BuiltinCodeBackend:
    """Deterministic offline stand-in for the worker: verb scripts only."""

    def execute(self, req: CodeRequest) -> CodeResponse:
        try:
            verbs = builtin_parse(req.code)
            outputs = run_verbs(verbs, req.input_images)
        except (VerbError, ValueError) as exc:
            return CodeResponse(Status.RUNTIME_ERROR, stderr=str(exc))
        return CodeResponse(Status.OK, output_images=outputs)


# --- framed worker protocol --------------------------------------------------

FRAME_HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 256 * 1024 * 1024


def encode_frame(obj: dict) -> bytes:
    payload = json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return FRAME_HEADER.pack(len(payload)) + payload


def request_to_wire(req: CodeRequest, request_id: str) -> dict:
    return {
        "id": request_id,
        "code": req.code,
        "images": {
            name: base64.b64encode(imagekit.png_bytes(img)).decode("ascii")
            for name, img in req.input_images.items()
        },
        "limits": {"wall_time": req.wall_time, "memory": req.memory},
    }


def response_from_wire(obj: dict) -> CodeResponse:
    status = Status(obj["status"])
    images = {}
    for name, b64 in obj.get("images", {}).items():
        images[name] = imagekit.from_png_bytes(base64.b64decode(b64))
    return CodeResponse(
        status=status,
        stdout=obj.get("stdout", ""),
        stderr=obj.get("stderr", ""),
        output_images=images,
    )


class _Worker:
    """One worker subprocess; a reader thread feeds frames into a queue so
    the client can always enforce a deadline."""

    def __init__(self, argv: list[str], cwd: str | None = None):
        self.argv = argv
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=cwd,
        )
        self._frames: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        stream = self.proc.stdout
        try:
            while True:
                header = stream.read(FRAME_HEADER.size)
                if len(header) < FRAME_HEADER.size:
                    break
                (length,) = FRAME_HEADER.unpack(header)
                if length > MAX_FRAME_BYTES:
                    self._frames.put(ValueError(f"oversized frame: {length} bytes"))
                    break
                payload = b""
                while len(payload) < length:
                    chunk = stream.read(length - len(payload))
                    if not chunk:
                        break
                    payload += chunk
                if len(payload) < length:
                    break
                self._frames.put(payload)
        except Exception as exc:  # reader must never take down the pool
            self._frames.put(exc)
        finally:
            self._frames.put(None)

    def round_trip(self, wire_request: dict, deadline: float) -> dict:
        """Send one frame and wait for one frame until ``deadline``.

        Raises TimeoutError past the deadline and ConnectionError when the
        worker dies or emits garbage.
        """
        try:
            self.proc.stdin.write(encode_frame(wire_request))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ConnectionError(f"worker stdin closed: {exc}") from exc
        remaining = deadline - time.monotonic()
        try:
            frame = self._frames.get(timeout=max(0.0, remaining))
        except queue.Empty:
            raise TimeoutError("no response before deadline") from None
        if frame is None:
            raise ConnectionError("worker closed its output stream")
        if isinstance(frame, Exception):
            raise ConnectionError(f"worker stream error: {frame}")
        try:
            obj = json.loads(frame.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConnectionError(f"undecodable worker frame: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConnectionError("worker frame is not a JSON object")
        return obj

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass

    def close(self) -> None:
        try:
            if self.proc.poll() is None and self.proc.stdin:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self.kill()


class WorkerCodeBackend:
    """Pool of worker processes with exclusive per-request checkout."""

    def __init__(self, argv: list[str], pool_size: int = 1, grace: float = 2.0,
                 cwd: str | None = None):
        if pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        self.argv = list(argv)
        self.grace = grace
        self.cwd = cwd
        self._pool: queue.Queue = queue.Queue()
        for _ in range(pool_size):
            self._pool.put(None)  # lazily spawned slots
        self._counter = 0
        self._lock = threading.Lock()

    def _next_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"req-{self._counter}"

    def execute(self, req: CodeRequest) -> CodeResponse:
        worker = self._pool.get()
        respawn = False
        try:
            if worker is None:
                worker = _Worker(self.argv, cwd=self.cwd)
            request_id = self._next_id()
            deadline = time.monotonic() + req.wall_time + self.grace
            try:
                obj = worker.round_trip(request_to_wire(req, request_id), deadline)
            except TimeoutError:
                respawn = True
                return CodeResponse(Status.TIMEOUT, stderr="worker deadline exceeded")
            except ConnectionError as exc:
                respawn = True
                return CodeResponse(Status.PROTOCOL_ERROR, stderr=str(exc))
            if obj.get("id") != request_id:
                respawn = True
                return CodeResponse(
                    Status.PROTOCOL_ERROR,
                    stderr=f"response id {obj.get('id')!r} does not match {request_id!r}",
                )
            try:
                return response_from_wire(obj)
            except (KeyError, ValueError) as exc:
                respawn = True
                return CodeResponse(Status.PROTOCOL_ERROR, stderr=f"malformed response: {exc}")
        finally:
            if respawn and worker is not None:
                worker.kill()
                worker = None
            self._pool.put(worker)

    def close(self) -> None:
        drained = []
        while True:
            try:
                drained.append(self._pool.get_nowait())
            except queue.Empty:
                break
        for worker in drained:
            if worker is not None:
                worker.close()
            self._pool.put(None)


def execute(req: CodeRequest, backend) -> CodeResponse:
    """Run one code request on the given backend object."""
    return backend.execute(req)
