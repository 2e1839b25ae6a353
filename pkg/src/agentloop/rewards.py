"""Verifiable rewards: format indicator, per-segment accuracy, F1/EM metrics.

The accuracy reward is modular per segment kind: the final answer is scored
by token-level F1 against the gold answers, search queries by semantic
similarity against reference queries, and code blocks receive a constant
credit of 1 (the content of generated code is deliberately unsupervised).
The total reward is the sum of the format reward and the accuracy reward.
"""
from __future__ import annotations

import math
import os
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from .grammar import Kind, Termination, Trajectory, validate_trajectory

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    s = s.lower().translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return s.split()


def f1_score(pred: str, golds: Sequence[str]) -> float:
    """Best token-multiset F1 of ``pred`` against any gold answer."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize_text(pred)
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_text(gold)
        if not pred_tokens or not gold_tokens:
            best = max(best, float(pred_tokens == gold_tokens))
            continue
        common = Counter(pred_tokens) & Counter(gold_tokens)
        num_same = sum(common.values())
        if num_same == 0:
            continue
        precision = num_same / len(pred_tokens)
        recall = num_same / len(gold_tokens)
        best = max(best, (2 * precision * recall) / (precision + recall))
    return best


def exact_match(pred: str, golds: Sequence[str]) -> int:
    """1 iff the normalized token sequence equals that of any gold."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize_text(pred)
    return int(any(pred_tokens == normalize_text(g) for g in golds))


class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class TokenFrequencyEmbedding:
    """Deterministic fallback embedding: normalized-token term frequencies.

    Vectors from one call share a vocabulary, so cosines between them are
    well defined; the provider is pure and needs no network.
    """

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        token_lists = [normalize_text(t) for t in texts]
        vocab = sorted({tok for toks in token_lists for tok in toks})
        index = {tok: i for i, tok in enumerate(vocab)}
        vectors = []
        for toks in token_lists:
            vec = [0.0] * len(vocab)
            for tok in toks:
                vec[index[tok]] += 1.0
            vectors.append(vec)
        return vectors


class RemoteEmbedding:
    """HTTP embedding endpoint: POST {"texts": [...]} -> {"vectors": [[...]]}."""

    def __init__(
        self,
        url: str,
        api_key_env: str = "EMBEDDING_API_KEY",
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = self.session.post(
            self.url, json={"texts": list(texts)}, headers=headers, timeout=self.timeout
        )
        resp.raise_for_status()
        return resp.json()["vectors"]


def _cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu2 = sum(a * a for a in u)
    nv2 = sum(b * b for b in v)
    if nu2 == 0.0 or nv2 == 0.0:
        return 0.0
    # sqrt of the product keeps the self-cosine exactly 1.0.
    return dot / math.sqrt(nu2 * nv2)


@dataclass
class AnswerKey:
    gold_answers: list[str]
    reference_queries: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.gold_answers or any(not a for a in self.gold_answers):
            raise ValueError("gold_answers must be a non-empty list of non-empty strings")


@dataclass
class RewardBreakdown:
    format: int
    per_segment: list[tuple[int, float]]
    accuracy: float
    total: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "per_segment": [[i, c] for i, c in self.per_segment],
            "accuracy": self.accuracy,
            "total": self.total,
            "flags": list(self.flags),
        }


def format_reward(traj: Trajectory) -> int:
    """1 iff the trajectory is structurally valid and ends in an answer."""
    if traj.terminated_by is not Termination.ANSWER:
        return 0
    if not validate_trajectory(traj):
        return 0
    if not any(seg.kind is Kind.ANSWER for seg in traj.segments()):
        return 0
    return 1


def _match_greedy(
    queries: Sequence[str], refs: Sequence[str], emb: EmbeddingProvider
) -> list[tuple[int, int, float]]:
    vectors = emb.embed(list(queries) + list(refs))
    qvecs, rvecs = vectors[: len(queries)], vectors[len(queries) :]
    pairs = [
        (qi, ri, _cosine(qv, rv))
        for qi, qv in enumerate(qvecs)
        for ri, rv in enumerate(rvecs)
    ]
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    used_q: set[int] = set()
    used_r: set[int] = set()
    matched = []
    for qi, ri, cos in pairs:
        if qi in used_q or ri in used_r:
            continue
        matched.append((qi, ri, cos))
        used_q.add(qi)
        used_r.add(ri)
    matched.sort()
    return matched


def search_similarity(
    queries: Sequence[str],
    refs: Sequence[str],
    emb: EmbeddingProvider,
    flags: list[str] | None = None,
) -> float:
    """Mean matched cosine between generated queries and reference queries.

    Pairs are matched greedily, highest cosine first, one-to-one; each
    matched cosine is floored at zero so the component stays in [0, 1].
    Transport failure of a remote provider falls back to the deterministic
    term-frequency provider and flags the breakdown.
    """
    if not queries or not refs:
        if flags is not None:
            flags.append("search_similarity:empty_input")
        return 0.0
    try:
        matched = _match_greedy(queries, refs, emb)
    except (requests.RequestException, OSError):
        if flags is not None:
            flags.append("search_similarity:embedding_fallback")
        matched = _match_greedy(queries, refs, TokenFrequencyEmbedding())
    return sum(max(0.0, cos) for _, _, cos in matched) / len(matched)


def accuracy_reward(
    traj: Trajectory,
    key: AnswerKey,
    emb: EmbeddingProvider,
    per_segment: list[tuple[int, float]] | None = None,
    flags: list[str] | None = None,
) -> float:
    """Modular accuracy: answer F1 + mean search similarity + code credit.

    Absent kinds contribute 0, so the value lies in [0, 3] for trajectories
    that mix all three behaviors.
    """
    segments = traj.segments()
    answer_indices = [i for i, s in enumerate(segments) if s.kind is Kind.ANSWER]
    search_indices = [i for i, s in enumerate(segments) if s.kind is Kind.SEARCH]
    code_indices = [i for i, s in enumerate(segments) if s.kind is Kind.CODE]

    answer_component = 0.0
    if answer_indices:
        final = answer_indices[-1]
        answer_component = f1_score(segments[final].body.strip(), key.gold_answers)
        if per_segment is not None:
            per_segment.append((final, answer_component))

    search_component = 0.0
    if search_indices:
        queries = [segments[i].body.strip() for i in search_indices]
        if key.reference_queries:
            try:
                matched = _match_greedy(queries, key.reference_queries, emb)
            except (requests.RequestException, OSError):
                if flags is not None:
                    flags.append("search_similarity:embedding_fallback")
                matched = _match_greedy(
                    queries, key.reference_queries, TokenFrequencyEmbedding()
                )
            per_query = {qi: max(0.0, cos) for qi, _, cos in matched}
            search_component = sum(per_query.values()) / len(matched)
            if per_segment is not None:
                for pos, i in enumerate(search_indices):
                    per_segment.append((i, per_query.get(pos, 0.0)))
        else:
            if flags is not None:
                flags.append("search_similarity:no_reference_queries")
            if per_segment is not None:
                for i in search_indices:
                    per_segment.append((i, 0.0))

    code_component = 0.0
    if code_indices:
        code_component = 1.0
        if per_segment is not None:
            for i in code_indices:
                per_segment.append((i, 1.0))

    return answer_component + search_component + code_component


def total_reward(traj: Trajectory, key: AnswerKey, emb: EmbeddingProvider) -> RewardBreakdown:
    """Total = format + accuracy, with the per-segment breakdown attached."""
    per_segment: list[tuple[int, float]] = []
    flags: list[str] = []
    fmt = format_reward(traj)
    acc = accuracy_reward(traj, key, emb, per_segment=per_segment, flags=flags)
    per_segment.sort()
    return RewardBreakdown(
        format=fmt,
        per_segment=per_segment,
        accuracy=acc,
        total=fmt + acc,
        flags=flags,
    )
