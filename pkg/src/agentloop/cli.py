"""Command-line interface.

Subcommands: build-bench, validate, rollout, score, reward, train-toy.
Exit codes: 0 success, 1 validation findings or data errors, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path

from . import bench, figures, fixtures, grpo, scoring
from .bench import Manifest, SourceItem, Task, load_manifest, save_manifest, validate_manifest
from .config import HarnessConfig, load_config
from .rewards import AnswerKey, RemoteEmbedding, TokenFrequencyEmbedding, total_reward
from .rollout import (
    HttpChatModel,
    Mode,
    RolloutConfig,
    ScriptedModel,
    ToolSet,
    Transcript,
    run_baseline,
    run_rollout,
)
from .sandbox import BuiltinCodeBackend, WorkerCodeBackend
from .search import FixtureSearchIndex, RemoteSearchClient


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentloop")
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--backend", choices=("builtin", "worker"), default="builtin",
                        help="code-execution backend")
    parser.add_argument("--offline", action="store_true",
                        help="fixture search corpus and scripted models only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-bench", help="generate a distorted-image benchmark")
    p.add_argument("--sources", type=Path, required=True, help="JSONL of clean source items")
    p.add_argument("--plan", choices=("test", "training"), default="test")
    p.add_argument("--composite", type=int, default=65, help="composite quota (test plan)")
    p.add_argument("--crop", type=int, default=65, help="crop quota (test plan)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("validate", help="check a manifest against a plan")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--plan", choices=("test", "training", "none"), default="none")
    p.add_argument("--composite", type=int, default=65)
    p.add_argument("--crop", type=int, default=65)
    p.add_argument("--base-dir", type=Path, default=None, help="root for image paths")

    p = sub.add_parser("rollout", help="run agents over a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--scripts", type=Path, default=None, help="scripted model turns (offline)")
    p.add_argument("--corpus", type=Path, default=None, help="fixture search corpus (offline)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--baseline", action="store_true", help="single-turn tool-free evaluation")
    p.add_argument("--base-dir", type=Path, default=None)

    p = sub.add_parser("score", help="score a prediction run")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--format", choices=("plain", "csv", "json"), default="plain")
    p.add_argument("--figure", type=Path, default=None, help="also render a bar chart PNG")

    p = sub.add_parser("reward", help="reward breakdowns for stored transcripts")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--transcripts", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="output JSONL (default stdout)")

    p = sub.add_parser("train-toy", help="GRPO loop on the synthetic tool-use task")
    p.add_argument("--updates", type=int, default=500)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--beta", type=float, default=0.04)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--log", type=Path, default=None, help="JSONL training log")
    p.add_argument("--figure", type=Path, default=None, help="reward/KL curves PNG")
    return parser


def _load_sources(path: Path) -> list[SourceItem]:
    sources = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        sources.append(
            SourceItem(rec["id"], rec["image_path"], rec["question"], tuple(rec["gold_answers"]))
        )
    return sources


def _plan_from_args(args) -> list[bench.PlanEntry] | None:
    if args.plan == "test":
        return bench.default_test_plan(getattr(args, "composite", 65), getattr(args, "crop", 65))
    if args.plan == "training":
        return bench.default_training_plan()
    return None


def _cmd_build_bench(args, cfg: HarnessConfig) -> int:
    plan = _plan_from_args(args)
    if plan is None:
        print("build-bench requires --plan test or training", file=sys.stderr)
        return 2
    sources = _load_sources(args.sources)
    seed = args.seed if args.seed is not None else cfg.seed
    manifest = bench.build_coding_bench(sources, plan, seed, args.out)
    save_manifest(manifest, args.out / "manifest.jsonl")
    print(f"built {len(manifest.items)} items under {args.out}")
    return 0


def _cmd_validate(args, cfg: HarnessConfig) -> int:
    manifest = load_manifest(args.manifest)
    base_dir = args.base_dir if args.base_dir is not None else args.manifest.parent
    findings = validate_manifest(manifest, _plan_from_args(args), base_dir=base_dir)
    for finding in findings:
        print(finding, file=sys.stderr)
    if findings:
        print(f"{len(findings)} finding(s)", file=sys.stderr)
        return 1
    print(f"manifest ok: {len(manifest.items)} items")
    return 0


def _make_code_backend(args, cfg: HarnessConfig):
    if args.backend == "worker":
        if not cfg.worker_cmd:
            raise SystemExit("--backend worker requires worker_cmd in the config file")
        return WorkerCodeBackend(
            shlex.split(cfg.worker_cmd), pool_size=cfg.worker_pool_size, grace=cfg.worker_grace
        )
    return BuiltinCodeBackend()


def _cmd_rollout(args, cfg: HarnessConfig) -> int:
    manifest = load_manifest(args.manifest)
    base_dir = args.base_dir if args.base_dir is not None else args.manifest.parent
    args.out.mkdir(parents=True, exist_ok=True)

    scripts = None
    if args.offline:
        scripts_path = args.scripts or (args.manifest.parent / "scripts.jsonl")
        if not scripts_path.is_file():
            print(f"offline rollout needs a scripts file, none at {scripts_path}", file=sys.stderr)
            return 1
        scripts = fixtures.load_scripts(scripts_path)
        corpus_path = args.corpus or (args.manifest.parent / "corpus.jsonl")
        search_backend = (
            FixtureSearchIndex.from_jsonl(corpus_path) if corpus_path.is_file() else FixtureSearchIndex()
        )
    else:
        if not cfg.model_url:
            print("online rollout requires model_url in the config file", file=sys.stderr)
            return 1
        search_backend = RemoteSearchClient(cfg.search_url)
    code_backend = _make_code_backend(args, cfg)
    tools = ToolSet(search_backend=search_backend, code_backend=code_backend)

    transcripts: list[Transcript] = []
    predictions = []
    for item in manifest.items:
        if scripts is not None:
            if item.id not in scripts:
                print(f"no script for item {item.id}", file=sys.stderr)
                return 1
            model = ScriptedModel(scripts[item.id])
        else:
            model = HttpChatModel(cfg.model_url, cfg.model_name,
                                  timeout=cfg.model_timeout, retries=cfg.model_retries)
        rollout_cfg = RolloutConfig(
            max_turns=cfg.max_turns,
            max_tool_calls=cfg.max_tool_calls,
            per_tool_timeout=cfg.per_tool_timeout,
            mode=Mode.CODING if item.task is Task.CODING else Mode.SEARCH,
            search_k=cfg.search_k,
            snippet_cap=cfg.snippet_cap,
        )
        try:
            if args.baseline:
                transcript = run_baseline(item, model, base_dir=base_dir)
            else:
                transcript = run_rollout(item, model, tools, rollout_cfg, base_dir=base_dir)
        except Exception:
            if hasattr(code_backend, "close"):
                code_backend.close()
            raise
        transcripts.append(transcript)
        predictions.append(
            scoring.Prediction(item.id, transcript.final_answer, "transcripts.jsonl")
        )
    if hasattr(code_backend, "close"):
        code_backend.close()

    with open(args.out / "transcripts.jsonl", "w", encoding="utf-8") as fh:
        for transcript in transcripts:
            fh.write(json.dumps(transcript.to_dict(), sort_keys=True) + "\n")
    scoring.save_run(scoring.PredictionRun("rollout", predictions), args.out / "predictions.jsonl")
    answered = sum(1 for p in predictions if p.answer)
    print(f"rolled out {len(predictions)} item(s), {answered} answered")
    return 0


def _cmd_score(args, cfg: HarnessConfig) -> int:
    manifest = load_manifest(args.manifest)
    run = scoring.load_run(args.run)
    try:
        report = scoring.score_run(run, manifest)
    except ValueError as exc:
        print(f"score: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(scoring.render_report(report, args.format))
    if args.figure is not None:
        figures.save_metric_figure(report, args.figure, title=args.run.stem)
        print(f"figure written to {args.figure}", file=sys.stderr)
    return 0


def _cmd_reward(args, cfg: HarnessConfig) -> int:
    manifest = load_manifest(args.manifest).by_id()
    if cfg.embedding_url and not args.offline:
        emb = RemoteEmbedding(cfg.embedding_url)
    else:
        emb = TokenFrequencyEmbedding()
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for line in args.transcripts.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            transcript = Transcript.from_dict(json.loads(line))
            item = manifest.get(transcript.task_id)
            if item is None:
                print(f"reward: unknown task id {transcript.task_id}", file=sys.stderr)
                return 1
            key = AnswerKey(list(item.gold_answers), list(item.reference_queries))
            breakdown = total_reward(transcript.trajectory, key, emb)
            record = {"id": transcript.task_id, **breakdown.to_dict()}
            out.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_train_toy(args, cfg: HarnessConfig) -> int:
    train_cfg = grpo.GrpoConfig(
        group_size=args.group_size,
        beta=args.beta,
        learning_rate=args.learning_rate,
        updates=args.updates,
        seed=args.seed if args.seed is not None else cfg.seed,
    )
    result = grpo.train_toy(train_cfg, log_path=args.log)
    tail = result.history[-min(50, len(result.history)) :]
    mean_tail = sum(r["mean_reward"] for r in tail) / len(tail)
    print(f"trained {train_cfg.updates} update(s); mean reward over last {len(tail)}: {mean_tail:.3f}")
    if args.figure is not None:
        figures.save_training_figure(result.history, args.figure)
        print(f"figure written to {args.figure}", file=sys.stderr)
    return 0


_COMMANDS = {
    "build-bench": _cmd_build_bench,
    "validate": _cmd_validate,
    "rollout": _cmd_rollout,
    "score": _cmd_score,
    "reward": _cmd_reward,
    "train-toy": _cmd_train_toy,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        return _COMMANDS[args.command](args, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
