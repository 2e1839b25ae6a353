"""Tag-structured agent output protocol: parsing, rendering, validation.

An assistant turn is a sequence of tagged segments. A turn is *valid* when
it consists of exactly one ``<think>`` block followed by exactly one action
block (``<search>``, ``<code>`` or ``<answer>``), with nothing but
whitespace between tags. ``<information>`` blocks are injected by the
harness on the environment side and never count as a valid model action.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class Kind(str, Enum):
    THINK = "think"
    SEARCH = "search"
    CODE = "code"
    ANSWER = "answer"
    INFORMATION = "information"


ACTION_KINDS = (Kind.SEARCH, Kind.CODE, Kind.ANSWER)

_TAG_RE = re.compile(r"</?(think|search|code|answer|information)>")


class Termination(str, Enum):
    ANSWER = "answer"
    BUDGET = "budget"
    FORMAT_VIOLATION = "format_violation"
    TOOL_ERROR = "tool_error"


@dataclass(frozen=True)
class Segment:
    kind: Kind
    body: str

    def render(self) -> str:
        if _TAG_RE.search(self.body):
            raise ValueError(
                f"segment body embeds a protocol delimiter: {self.body!r}"
            )
        return f"<{self.kind.value}>{self.body}</{self.kind.value}>"


@dataclass
class TurnParse:
    segments: list[Segment] = field(default_factory=list)
    stray_text: bool = False
    unclosed: bool = False
    valid: bool = False

    def to_dict(self) -> dict:
        return {
            "segments": [{"kind": s.kind.value, "body": s.body} for s in self.segments],
            "stray_text": self.stray_text,
            "unclosed": self.unclosed,
            "valid": self.valid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TurnParse":
        return cls(
            segments=[Segment(Kind(s["kind"]), s["body"]) for s in d["segments"]],
            stray_text=d["stray_text"],
            unclosed=d["unclosed"],
            valid=d["valid"],
        )


@dataclass
class Trajectory:
    turns: list[TurnParse] = field(default_factory=list)
    terminated_by: Termination = Termination.BUDGET

    def segments(self) -> list[Segment]:
        return [seg for turn in self.turns for seg in turn.segments]

    def to_dict(self) -> dict:
        return {
            "turns": [t.to_dict() for t in self.turns],
            "terminated_by": self.terminated_by.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            turns=[TurnParse.from_dict(t) for t in d["turns"]],
            terminated_by=Termination(d["terminated_by"]),
        )


def _grammar_ok(segments: list[Segment]) -> bool:
    if len(segments) != 2:
        return False
    think, action = segments
    if think.kind is not Kind.THINK:
        return False
    if action.kind not in ACTION_KINDS:
        return False
    if action.kind is Kind.SEARCH and not action.body.strip():
        return False
    return True


def parse_turn(text: str) -> TurnParse:
    """Parse raw model output into tagged segments.

    Total over arbitrary input: malformation is reported through the
    ``stray_text``/``unclosed``/``valid`` flags, never raised. Bytes that
    are neither inside a well-delimited segment nor inter-tag whitespace
    count as stray text; an opening tag without a matching close marks the
    turn unclosed and swallows the rest of the input.
    """
    parse = TurnParse()
    tag_soup = False
    pos = 0
    while True:
        m = _TAG_RE.search(text, pos)
        if m is None:
            if text[pos:].strip():
                parse.stray_text = True
            break
        if text[pos : m.start()].strip():
            parse.stray_text = True
        token = m.group(0)
        if token.startswith("</"):
            # Dangling close with no matching open.
            parse.stray_text = True
            pos = m.end()
            continue
        kind = Kind(m.group(1))
        closer = f"</{kind.value}>"
        close_at = text.find(closer, m.end())
        if close_at < 0:
            parse.unclosed = True
            break
        body = text[m.end() : close_at]
        if _TAG_RE.search(body):
            # Overlapping or nested tags; no clean segment to emit.
            tag_soup = True
        else:
            parse.segments.append(Segment(kind, body))
        pos = close_at + len(closer)
    parse.valid = (
        not parse.stray_text
        and not parse.unclosed
        and not tag_soup
        and _grammar_ok(parse.segments)
    )
    return parse


def render_turn(segments: list[Segment]) -> str:
    """Inverse of :func:`parse_turn` for delimiter-free segment lists."""
    return "".join(seg.render() for seg in segments)


def validate_trajectory(traj: Trajectory) -> bool:
    """True iff every turn is valid and any answer is unique and terminal."""
    if not all(turn.valid for turn in traj.turns):
        return False
    answers = [
        (ti, si)
        for ti, turn in enumerate(traj.turns)
        for si, seg in enumerate(turn.segments)
        if seg.kind is Kind.ANSWER
    ]
    if len(answers) > 1:
        return False
    if answers:
        ti, si = answers[0]
        if ti != len(traj.turns) - 1:
            return False
        if si != len(traj.turns[ti].segments) - 1:
            return False
    return True
