"""Multi-turn agentic rollout loop.

Each turn queries the model, parses the tag protocol, dispatches at most
one tool call, and feeds the result back inside an ``<information>`` block
on the environment role. Budgets on model turns and tool calls are enforced
independently; a malformed turn ends the rollout as a format violation so
the reward side sees a crisp signal.
"""
from __future__ import annotations

import base64
import os
import time
from dataclasses import dataclass, field
from enum import Enum

import requests

from .bench import BenchItem, Task
from .grammar import Kind, Segment, Termination, Trajectory, TurnParse, parse_turn
from .imagekit import ImageBuffer, load_png, png_bytes
from .sandbox import CodeRequest, CodeResponse, Status
from .search import SearchQuery, SearchTransportError, format_information

DIRECT_ANSWER_SUFFIX = "Answer the question directly."

SEARCH_SYSTEM_PROMPT = """\
You are a multimodal assistant that answers multi-hop questions with the
help of a web search tool. Work step by step:
1. Put your private reasoning inside <think>...</think> tags.
2. When you need an external fact, emit exactly one concise query inside
   <search>...</search> tags; results arrive in an <information>...</information>
   block on the next turn.
3. When you know the answer, emit it inside <answer>...</answer> tags.
Every turn must be a <think> block followed by exactly one <search> or
<answer> block and nothing else. Keep the final answer short and direct."""

CODING_SYSTEM_PROMPT = """\
You are a multimodal assistant that answers questions about images that may
be rotated, darkened, overexposed, blurred, noisy, or padded with
irrelevant content. You can repair the image with a processing tool:
1. Put your private reasoning inside <think>...</think> tags.
2. To process the current image, emit a script inside <code>...</code>
   tags, one instruction per line, chosen from:
   rotate {90|180|270}, crop X Y W H, brightness FACTOR, blur SIGMA,
   denoise [RADIUS], save NAME.
   The tool reply arrives in an <information>...</information> block and the
   processed image is attached for you to look at.
3. When you know the answer, emit it inside <answer>...</answer> tags.
Every turn must be a <think> block followed by exactly one <code> or
<answer> block and nothing else. Keep the final answer short and direct."""


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    ENVIRONMENT = "environment"


class Mode(str, Enum):
    SEARCH = "search"
    CODING = "coding"


@dataclass
class ImageAttachment:
    name: str
    image: ImageBuffer


@dataclass
class Message:
    role: Role
    text: str
    images: list[ImageAttachment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "text": self.text,
            "images": [att.name for att in self.images],
        }


@dataclass
class ToolEvent:
    kind: str
    request: str
    response: str
    ok: bool = True
    latency: float = 0.0

    def to_dict(self) -> dict:
        # Latency is intentionally left out: serialized transcripts must be
        # byte-identical across reruns of a deterministic rollout.
        return {"kind": self.kind, "request": self.request, "response": self.response, "ok": self.ok}


@dataclass
class RolloutConfig:
    max_turns: int = 8
    max_tool_calls: int = 6
    per_tool_timeout: float = 10.0
    mode: Mode = Mode.SEARCH
    search_k: int = 5
    snippet_cap: int | None = 300
    system_prompt: str | None = None

    def __post_init__(self) -> None:
        if self.max_turns < 1 or self.max_tool_calls < 0:
            raise ValueError("budgets must be positive")

    def resolved_prompt(self) -> str:
        if self.system_prompt is not None:
            return self.system_prompt
        return CODING_SYSTEM_PROMPT if self.mode is Mode.CODING else SEARCH_SYSTEM_PROMPT


@dataclass
class Transcript:
    task_id: str
    mode: Mode
    messages: list[Message] = field(default_factory=list)
    trajectory: Trajectory = field(default_factory=Trajectory)
    tool_events: list[ToolEvent] = field(default_factory=list)
    final_answer: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "mode": self.mode.value,
            "messages": [m.to_dict() for m in self.messages],
            "trajectory": self.trajectory.to_dict(),
            "tool_events": [e.to_dict() for e in self.tool_events],
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        t = cls(task_id=d["task_id"], mode=Mode(d["mode"]))
        t.messages = [
            Message(Role(m["role"]), m["text"], []) for m in d.get("messages", [])
        ]
        t.trajectory = Trajectory.from_dict(d["trajectory"])
        t.tool_events = [
            ToolEvent(e["kind"], e["request"], e["response"], e.get("ok", True))
            for e in d.get("tool_events", [])
        ]
        t.final_answer = d.get("final_answer")
        return t


class ModelProvider:
    """Contract: given the message history, return one assistant completion."""

    def complete(self, messages: list[Message]) -> str:  # pragma: no cover - interface
        raise NotImplementedError


class ScriptedModel(ModelProvider):
    """Deterministic test double replaying a fixed response sequence.

    Responses are keyed by assistant turn index; requests past the end of
    the script replay the final entry.
    """

    def __init__(self, responses: list[str]):
        if not responses:
            raise ValueError("scripted model needs at least one response")
        self.responses = list(responses)
        self.calls = 0

    def complete(self, messages: list[Message]) -> str:
        idx = min(self.calls, len(self.responses) - 1)
        self.calls += 1
        return self.responses[idx]


class HttpChatModel(ModelProvider):
    """Chat-completions-shaped HTTP client; images ride as data URLs."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: str = "MODEL_API_KEY",
        timeout: float = 120.0,
        retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()

    def _wire_messages(self, messages: list[Message]) -> list[dict]:
        wire = []
        for msg in messages:
            role = "user" if msg.role is Role.ENVIRONMENT else msg.role.value
            if not msg.images:
                wire.append({"role": role, "content": msg.text})
                continue
            content: list[dict] = [{"type": "text", "text": msg.text}]
            for att in msg.images:
                b64 = base64.b64encode(png_bytes(att.image)).decode("ascii")
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                )
            wire.append({"role": role, "content": content})
        return wire

    def complete(self, messages: list[Message]) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.model, "messages": self._wire_messages(messages)}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.5 * (attempt + 1))
        raise RuntimeError(f"model request failed after {self.retries + 1} attempts: {last}")


@dataclass
class ToolSet:
    search_backend: object | None = None
    code_backend: object | None = None


@dataclass
class ToolResult:
    kind: str
    text: str
    images: dict[str, ImageBuffer] = field(default_factory=dict)
    ok: bool = True


def format_code_information(resp: CodeResponse) -> ToolResult:
    if resp.status is Status.OK:
        text = "execution ok"
        if resp.stdout.strip():
            text += "\n" + resp.stdout.strip()
        return ToolResult("code", text, dict(resp.output_images), ok=True)
    if resp.status is Status.TIMEOUT:
        detail = resp.stderr or "wall time exceeded"
        return ToolResult("code", f"execution timed out: {detail}", ok=False)
    detail = resp.stderr or resp.status.value
    return ToolResult("code", f"execution error: {detail}", ok=False)


def pending_tool_segment(transcript: Transcript) -> Segment | None:
    """The Search/Code segment of the last assistant message, if no
    environment reply has been injected for it yet."""
    for msg in reversed(transcript.messages):
        if msg.role is Role.ENVIRONMENT:
            return None
        if msg.role is Role.ASSISTANT:
            parsed = parse_turn(msg.text)
            if parsed.segments and parsed.segments[-1].kind in (Kind.SEARCH, Kind.CODE):
                return parsed.segments[-1]
            return None
    return None


def inject_information(transcript: Transcript, result: ToolResult) -> Transcript:
    """Append the environment message carrying one tool result."""
    if pending_tool_segment(transcript) is None:
        raise ValueError("inject_information called with no pending tool segment")
    attachments = [ImageAttachment(name, img) for name, img in result.images.items()]
    transcript.messages.append(
        Message(Role.ENVIRONMENT, f"<information>{result.text}</information>", attachments)
    )
    return transcript


def _task_image(task: BenchItem, base_dir) -> ImageBuffer | None:
    if not task.image_path:
        return None
    path = task.image_path
    if base_dir is not None:
        path = os.path.join(os.fspath(base_dir), path)
    return load_png(path)


def run_rollout(
    task: BenchItem,
    model: ModelProvider,
    tools: ToolSet,
    cfg: RolloutConfig,
    base_dir=None,
) -> Transcript:
    """Drive the loop until an answer, a violation, or budget exhaustion."""
    transcript = Transcript(task_id=task.id, mode=cfg.mode)
    transcript.messages.append(Message(Role.SYSTEM, cfg.resolved_prompt()))
    image = _task_image(task, base_dir)
    user_images = [ImageAttachment("image", image)] if image is not None else []
    transcript.messages.append(Message(Role.USER, task.question, user_images))

    current_image = image
    tool_calls = 0
    termination = Termination.BUDGET
    for _ in range(cfg.max_turns):
        text = model.complete(transcript.messages)
        parsed = parse_turn(text)
        transcript.messages.append(Message(Role.ASSISTANT, text))
        if not parsed.valid:
            transcript.trajectory.turns.append(parsed)
            termination = Termination.FORMAT_VIOLATION
            break
        action = parsed.segments[-1]
        if action.kind is Kind.ANSWER:
            transcript.trajectory.turns.append(parsed)
            transcript.final_answer = action.body.strip()
            termination = Termination.ANSWER
            break
        if tool_calls >= cfg.max_tool_calls:
            # The turn is excluded from the trajectory: every Search/Code
            # segment in it must pair with exactly one tool event.
            termination = Termination.BUDGET
            break
        transcript.trajectory.turns.append(parsed)
        tool_calls += 1
        started = time.monotonic()
        try:
            result = _dispatch(action, tools, cfg, current_image)
        except Exception as exc:
            transcript.tool_events.append(
                ToolEvent(action.kind.value, action.body.strip(), f"tool failure: {exc}", ok=False,
                          latency=time.monotonic() - started)
            )
            termination = Termination.TOOL_ERROR
            break
        if result.kind == "code" and result.images:
            current_image = list(result.images.values())[-1]
        transcript.tool_events.append(
            ToolEvent(result.kind, action.body.strip(), result.text, result.ok,
                      latency=time.monotonic() - started)
        )
        inject_information(transcript, result)
    transcript.trajectory.terminated_by = termination
    if termination is not Termination.ANSWER:
        transcript.final_answer = None
    return transcript


def _dispatch(
    action: Segment, tools: ToolSet, cfg: RolloutConfig, current_image: ImageBuffer | None
) -> ToolResult:
    if action.kind is Kind.SEARCH:
        if tools.search_backend is None:
            return ToolResult("search", "search error: no search backend configured", ok=False)
        query = SearchQuery(action.body.strip(), k=cfg.search_k)
        try:
            results = tools.search_backend.search(query)
        except (SearchTransportError, requests.RequestException) as exc:
            return ToolResult("search", f"search error: {exc}", ok=False)
        return ToolResult("search", format_information(results, cfg.snippet_cap))
    if tools.code_backend is None:
        return ToolResult("code", "execution error: no code backend configured", ok=False)
    code = action.body.strip()
    if not code:
        return ToolResult("code", "execution error: empty script", ok=False)
    inputs = {"image": current_image} if current_image is not None else {}
    req = CodeRequest(code=code, input_images=inputs, wall_time=cfg.per_tool_timeout)
    resp = tools.code_backend.execute(req)
    return format_code_information(resp)


def run_baseline(task: BenchItem, model: ModelProvider, base_dir=None) -> Transcript:
    """Single-turn tool-free evaluation with a direct-answer suffix."""
    transcript = Transcript(task_id=task.id, mode=Mode.CODING if task.task is Task.CODING else Mode.SEARCH)
    image = _task_image(task, base_dir)
    user_images = [ImageAttachment("image", image)] if image is not None else []
    question = f"{task.question} {DIRECT_ANSWER_SUFFIX}"
    transcript.messages.append(Message(Role.USER, question, user_images))
    text = model.complete(transcript.messages)
    transcript.messages.append(Message(Role.ASSISTANT, text))
    parsed = parse_turn(text)
    answer_bodies = [s.body for s in parsed.segments if s.kind is Kind.ANSWER]
    transcript.final_answer = (answer_bodies[-1] if answer_bodies else text).strip()
    transcript.trajectory.terminated_by = Termination.ANSWER
    return transcript
