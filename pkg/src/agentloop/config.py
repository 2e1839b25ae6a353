"""Flat key = value configuration file.

One assignment per line, ``#`` comments, strings optionally quoted, ints,
floats and true/false recognized. API keys never live here; they are read
from environment variables by the clients that need them.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class HarnessConfig:
    model_url: str = ""
    model_name: str = ""
    model_timeout: float = 120.0
    model_retries: int = 2
    search_url: str = "https://google.serper.dev/search"
    search_k: int = 5
    snippet_cap: int = 300
    embedding_url: str = ""
    worker_cmd: str = ""
    worker_pool_size: int = 1
    worker_grace: float = 2.0
    max_turns: int = 8
    max_tool_calls: int = 6
    per_tool_timeout: float = 10.0
    seed: int = 0


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def load_config(path: str | Path | None) -> HarnessConfig:
    cfg = HarnessConfig()
    if path is None:
        return cfg
    known = {f.name: f.type for f in fields(HarnessConfig)}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        value = _parse_value(raw)
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int) and not isinstance(value, bool):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif isinstance(current, str):
            value = str(value)
        setattr(cfg, key, value)
    return cfg
