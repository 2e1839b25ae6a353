"""Search tool backends: a deterministic offline fixture index and a
remote web-search API client.

The fixture index ranks documents by the count of normalized tokens shared
with the query, ties broken by document id, which keeps closed-corpus tests
fully deterministic. The remote client targets the common
``{q, num} -> {organic: [{title, snippet, link}]}`` JSON layout.
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import requests

from .rewards import normalize_text

MAX_QUERY_CHARS = 512


@dataclass(frozen=True)
class SearchQuery:
    text: str
    k: int = 5

    def __post_init__(self) -> None:
        trimmed = self.text.strip()[:MAX_QUERY_CHARS]
        object.__setattr__(self, "text", trimmed)
        if not trimmed:
            raise ValueError("query text must be non-empty")
        if self.k < 0:
            raise ValueError("k must be nonnegative")


@dataclass(frozen=True)
class SearchResult:
    rank: int
    title: str
    snippet: str
    url: str


class SearchBackend(Protocol):
    def search(self, query: SearchQuery) -> list[SearchResult]: ...


class SearchTransportError(RuntimeError):
    """Remote search failed after retries; callers may degrade gracefully."""


@dataclass(frozen=True)
class CorpusDoc:
    id: str
    title: str
    text: str


class FixtureSearchIndex:
    """In-memory corpus scored by normalized-token overlap with the query."""

    def __init__(self, docs: Iterable[CorpusDoc] = ()):
        self.docs = list(docs)
        self._tokens = [
            set(normalize_text(d.title)) | set(normalize_text(d.text)) for d in self.docs
        ]

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "FixtureSearchIndex":
        docs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            docs.append(CorpusDoc(rec["id"], rec.get("title", ""), rec.get("text", "")))
        return cls(docs)

    def search(self, query: SearchQuery) -> list[SearchResult]:
        qtokens = set(normalize_text(query.text))
        scored = []
        for doc, toks in zip(self.docs, self._tokens):
            overlap = len(qtokens & toks)
            if overlap > 0:
                scored.append((-overlap, doc.id, doc))
        scored.sort()
        out = []
        for rank, (_, _, doc) in enumerate(scored[: query.k], start=1):
            snippet = doc.text
            out.append(SearchResult(rank=rank, title=doc.title, snippet=snippet, url=f"fixture://{doc.id}"))
        return out


class RemoteSearchClient:
    """Web-search API client with bounded concurrency and simple retries."""

    def __init__(
        self,
        url: str = "https://google.serper.dev/search",
        api_key_env: str = "SERPER_API_KEY",
        timeout: float = 15.0,
        retries: int = 2,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def search(self, query: SearchQuery) -> list[SearchResult]:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise RuntimeError(
                f"remote search requires the {self.api_key_env} environment variable"
            )
        payload = {"q": query.text, "num": query.k}
        headers = {"X-API-KEY": api_key, "Content-Type": "application/json"}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    resp = self.session.post(
                        self.url, json=payload, headers=headers, timeout=self.timeout
                    )
                resp.raise_for_status()
                return _parse_organic(resp.json(), query.k)
            except (requests.RequestException, ValueError, KeyError) as exc:
                last_error = exc
                if attempt < self.retries:
                    time.sleep(0.5 * (attempt + 1))
        raise SearchTransportError(f"search failed after {self.retries + 1} attempts: {last_error}")


def _parse_organic(body: dict, k: int) -> list[SearchResult]:
    organic = body.get("organic", [])
    out = []
    for rank, entry in enumerate(organic[:k], start=1):
        out.append(
            SearchResult(
                rank=rank,
                title=entry.get("title", ""),
                snippet=entry.get("snippet", ""),
                url=entry.get("link", ""),
            )
        )
    return out


def search(query: SearchQuery, backend: SearchBackend) -> list[SearchResult]:
    return backend.search(query)


def format_information(results: list[SearchResult], snippet_cap: int | None = None) -> str:
    """Render results one per line as ``[rank] title — snippet (url)``."""
    if not results:
        return "no results"
    lines = []
    for r in results:
        snippet = r.snippet
        if snippet_cap is not None and len(snippet) > snippet_cap:
            snippet = snippet[:snippet_cap] + "..."
        lines.append(f"[{r.rank}] {r.title} — {snippet} ({r.url})")
    return "\n".join(lines)
