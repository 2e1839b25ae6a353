"""Restricted execution of user scripts.

Each request runs in a fresh namespace inside its own temp directory with
a wall-clock alarm and a best-effort address-space cap. Imports outside
the allowlist and file access outside the request's temp directory raise
denial errors that surface as runtime errors in the response.
"""
from __future__ import annotations

import builtins
import io
import math
import os
import resource
import shutil
import signal
import sys
import tempfile
import traceback

import numpy as np

from . import kernels

IMPORT_ALLOWLIST = ("math", "cmath", "numpy")


class ExecutionTimeout(BaseException):
    """Raised by the alarm handler; BaseException so a bare ``except
    Exception`` in user code cannot swallow it."""


class CapabilityDenied(RuntimeError):
    pass


_SAFE_BUILTIN_NAMES = [
    "abs", "all", "any", "bool", "bytes", "callable", "chr", "dict", "divmod",
    "enumerate", "filter", "float", "format", "frozenset", "hasattr", "hash",
    "hex", "int", "isinstance", "issubclass", "iter", "len", "list", "map",
    "max", "min", "next", "object", "oct", "ord", "pow", "print", "range",
    "repr", "reversed", "round", "set", "slice", "sorted", "str", "sum",
    "tuple", "zip",
    "ArithmeticError", "AssertionError", "AttributeError", "BaseException",
    "Exception", "FloatingPointError", "IndexError", "KeyError", "LookupError",
    "MemoryError", "NameError", "NotImplementedError", "OSError",
    "OverflowError", "RuntimeError", "StopIteration", "TypeError",
    "ValueError", "ZeroDivisionError", "True", "False", "None",
]


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if level != 0 or root not in IMPORT_ALLOWLIST:
        raise CapabilityDenied(f"import of {name!r} denied: not in the execution allowlist")
    return builtins.__import__(name, globals, locals, fromlist, level)


def _guarded_open(workdir: str):
    def guarded(path, mode="r", *args, **kwargs):
        resolved = os.path.realpath(os.path.join(workdir, os.fspath(path)))
        if not resolved.startswith(os.path.realpath(workdir) + os.sep):
            raise CapabilityDenied(
                f"file access to {path!r} denied: outside the request work directory"
            )
        return builtins.open(resolved, mode, *args, **kwargs)

    return guarded


def _make_builtins(workdir: str) -> dict:
    table = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES if hasattr(builtins, name)}
    table["True"], table["False"], table["None"] = True, False, None
    table["__import__"] = _guarded_import
    table["open"] = _guarded_open(workdir)
    return table


def coerce_image(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"saved image must have shape (h, w, 3), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.floor(arr.astype(np.float64) + 0.5), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(arr)


class _MemoryCap:
    """Lower the soft address-space limit around an execution; the hard
    limit is untouched so the cap can be restored afterwards."""

    def __init__(self, extra_bytes: int):
        self.extra = int(extra_bytes)
        self.saved = None

    def _current_vm_bytes(self) -> int | None:
        try:
            with builtins.open("/proc/self/status", "r") as fh:
                for line in fh:
                    if line.startswith("VmSize:"):
                        return int(line.split()[1]) * 1024
        except (OSError, ValueError, IndexError):
            return None
        return None

    def __enter__(self):
        if self.extra <= 0:
            return self
        base = self._current_vm_bytes()
        if base is None:
            return self
        soft, hard = resource.getrlimit(resource.RLIMIT_AS)
        target = base + self.extra
        if hard != resource.RLIM_INFINITY:
            target = min(target, hard)
        try:
            resource.setrlimit(resource.RLIMIT_AS, (target, hard))
            self.saved = (soft, hard)
        except (ValueError, OSError):
            self.saved = None
        return self

    def __exit__(self, *exc):
        if self.saved is not None:
            try:
                resource.setrlimit(resource.RLIMIT_AS, self.saved)
            except (ValueError, OSError):
                pass
        return False


def run_user_code(
    code: str,
    images: dict[str, np.ndarray],
    wall_time: float = 10.0,
    memory: int = 512 * 1024 * 1024,
) -> dict:
    """Execute one request, returning status/stdout/stderr/images."""
    outputs: dict[str, np.ndarray] = {}
    stdout_io = io.StringIO()
    stderr_io = io.StringIO()
    status = "ok"

    workdir = tempfile.mkdtemp(prefix="codeworker-")
    old_cwd = os.getcwd()
    old_stdout, old_stderr = sys.stdout, sys.stderr
    old_handler = signal.getsignal(signal.SIGALRM)

    def on_alarm(signum, frame):
        raise ExecutionTimeout()

    def save(name, image):
        outputs[str(name)] = coerce_image(image)

    try:
        os.chdir(workdir)
        sys.stdout, sys.stderr = stdout_io, stderr_io
        signal.signal(signal.SIGALRM, on_alarm)
        # Interval mode: if user code swallows one timeout the alarm fires
        # again. Signal-starved degenerate loops are the client's job to
        # kill; this side cannot interrupt them.
        wall = max(0.001, float(wall_time))
        signal.setitimer(signal.ITIMER_REAL, wall, min(0.5, wall))
        with _MemoryCap(memory):
            try:
                kernels.parse_verbs(code)
                is_verbs = True
            except kernels.VerbScriptError:
                is_verbs = False
            if is_verbs:
                outputs.update(kernels.run_verb_script(code, images))
            else:
                namespace = {
                    "__builtins__": _make_builtins(workdir),
                    "__name__": "__request__",
                    "images": dict(images),
                    "save": save,
                    "np": np,
                    "math": math,
                }
                for name, arr in images.items():
                    if name.isidentifier() and not hasattr(builtins, name):
                        namespace.setdefault(name, arr)
                exec(compile(code, "<request>", "exec"), namespace)
    except ExecutionTimeout:
        status = "timeout"
        outputs.clear()
        stderr_io.write("wall time exceeded\n")
    except MemoryError:
        status = "runtime_error"
        stderr_io.write("memory limit exceeded\n")
    except kernels.VerbScriptError as exc:
        status = "runtime_error"
        stderr_io.write(f"{exc}\n")
    except BaseException as exc:  # noqa: BLE001 - report, never crash the loop
        status = "runtime_error"
        tb = traceback.format_exception_only(type(exc), exc)
        stderr_io.write("".join(tb))
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, old_handler)
        sys.stdout, sys.stderr = old_stdout, old_stderr
        os.chdir(old_cwd)
        shutil.rmtree(workdir, ignore_errors=True)

    return {
        "status": status,
        "stdout": stdout_io.getvalue(),
        "stderr": stderr_io.getvalue(),
        "images": outputs if status == "ok" else {},
    }
