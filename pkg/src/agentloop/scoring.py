"""Scoring of prediction runs against a manifest.

Per-item F1 and exact match feed split-level means (in percent); the
average column is the item-weighted mean across splits, which is exact
rather than a mean of split means. Rendering rounds half-up to two
decimals in a fixed column order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .bench import Manifest, Split
from .rewards import exact_match, f1_score

REPORT_COLUMNS = ("simple_f1", "simple_em", "hard_f1", "hard_em", "avg_f1", "avg_em")


@dataclass
class Prediction:
    id: str
    answer: str | None = None
    transcript: str | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "answer": self.answer}
        if self.transcript is not None:
            out["transcript"] = self.transcript
        return out


@dataclass
class PredictionRun:
    run_id: str
    predictions: list[Prediction] = field(default_factory=list)

    def by_id(self) -> dict[str, Prediction]:
        return {p.id: p for p in self.predictions}


def load_run(path: str | Path, run_id: str | None = None) -> PredictionRun:
    preds = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        preds.append(Prediction(rec["id"], rec.get("answer"), rec.get("transcript")))
    return PredictionRun(run_id or Path(path).stem, preds)


def save_run(run: PredictionRun, path: str | Path) -> None:
    lines = [json.dumps(p.to_dict(), sort_keys=True) for p in run.predictions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class SplitScore:
    f1: float
    em: float
    count: int

    def to_dict(self) -> dict:
        return {"f1": self.f1, "em": self.em, "count": self.count}


@dataclass
class MetricReport:
    simple: SplitScore
    hard: SplitScore
    avg: SplitScore

    def to_dict(self) -> dict:
        return {"simple": self.simple.to_dict(), "hard": self.hard.to_dict(), "avg": self.avg.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            simple=SplitScore(**d["simple"]),
            hard=SplitScore(**d["hard"]),
            avg=SplitScore(**d["avg"]),
        )


def weighted_average(split_values: list[tuple[float, int]]) -> float:
    """Item-weighted mean of (split value, item count) pairs."""
    total = sum(count for _, count in split_values)
    if total == 0:
        return 0.0
    return sum(value * count for value, count in split_values) / total


def aggregate_report(
    simple_f1: float, simple_em: float, simple_count: int,
    hard_f1: float, hard_em: float, hard_count: int,
) -> MetricReport:
    return MetricReport(
        simple=SplitScore(simple_f1, simple_em, simple_count),
        hard=SplitScore(hard_f1, hard_em, hard_count),
        avg=SplitScore(
            weighted_average([(simple_f1, simple_count), (hard_f1, hard_count)]),
            weighted_average([(simple_em, simple_count), (hard_em, hard_count)]),
            simple_count + hard_count,
        ),
    )


def score_run(run: PredictionRun, manifest: Manifest) -> MetricReport:
    """Score one run; unknown prediction ids are rejected, missing
    predictions score zero on both metrics."""
    items = manifest.by_id()
    unknown = [p.id for p in run.predictions if p.id not in items]
    if unknown:
        raise ValueError(f"run contains ids not in the manifest: {unknown[:5]}")
    preds = run.by_id()
    sums = {Split.SIMPLE: [0.0, 0.0, 0], Split.HARD: [0.0, 0.0, 0]}
    for item in manifest.items:
        pred = preds.get(item.id)
        answer = pred.answer if pred is not None else None
        if answer:
            f1 = f1_score(answer, item.gold_answers)
            em = float(exact_match(answer, item.gold_answers))
        else:
            f1 = em = 0.0
        bucket = sums[item.split]
        bucket[0] += f1
        bucket[1] += em
        bucket[2] += 1
    simple_f1, simple_em, n_simple = sums[Split.SIMPLE]
    hard_f1, hard_em, n_hard = sums[Split.HARD]
    return aggregate_report(
        100.0 * simple_f1 / n_simple if n_simple else 0.0,
        100.0 * simple_em / n_simple if n_simple else 0.0,
        n_simple,
        100.0 * hard_f1 / n_hard if n_hard else 0.0,
        100.0 * hard_em / n_hard if n_hard else 0.0,
        n_hard,
    )


def round2(value: float) -> str:
    """Two-decimal half-up rounding of the shortest decimal representation."""
    return str(Decimal(str(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _row(report: MetricReport) -> list[str]:
    return [
        round2(report.simple.f1),
        round2(report.simple.em),
        round2(report.hard.f1),
        round2(report.hard.em),
        round2(report.avg.f1),
        round2(report.avg.em),
    ]


def render_report(report: MetricReport, fmt: str = "plain") -> str:
    if fmt == "csv":
        return ",".join(REPORT_COLUMNS) + "\n" + ",".join(_row(report)) + "\n"
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "plain":
        values = _row(report)
        widths = [max(len(c), len(v)) for c, v in zip(REPORT_COLUMNS, values)]
        header = "  ".join(c.rjust(w) for c, w in zip(REPORT_COLUMNS, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        counts = (
            f"items: simple={report.simple.count} hard={report.hard.count} "
            f"total={report.avg.count}"
        )
        return f"{header}\n{row}\n{counts}\n"
    raise ValueError(f"unknown report format {fmt!r}")
