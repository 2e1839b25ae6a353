import importlib.util
import json
import sys

import numpy as np
import pytest

from agentloop import imagekit as ik
from agentloop.bench import load_manifest
from agentloop.cli import main
from agentloop.config import HarnessConfig, load_config
from agentloop.fixtures import build_fixture_pack, load_scripts
from agentloop.imagekit import ImageBuffer


@pytest.fixture(scope="module")
def pack(tmp_path_factory):
    return build_fixture_pack(tmp_path_factory.mktemp("pack"), seed=0)


class TestConfig:
    def test_defaults_when_missing(self):
        assert load_config(None) == HarnessConfig()

    def test_parse_types(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text(
            "# comment\n"
            'model_url = "http://example.test/v1"\n'
            "search_k = 7\n"
            "per_tool_timeout = 2.5\n"
            "worker_cmd = 'python3 -m something'\n",
            encoding="utf-8",
        )
        cfg = load_config(path)
        assert cfg.model_url == "http://example.test/v1"
        assert cfg.search_k == 7
        assert cfg.per_tool_timeout == 2.5
        assert cfg.worker_cmd == "python3 -m something"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("mystery = 1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="mystery"):
            load_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("just words\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_config(path)


class TestFixturePack:
    def test_manifest_shape(self, pack):
        manifest = load_manifest(pack / "manifest.jsonl")
        assert len(manifest.items) == 20
        tasks = [item.task.value for item in manifest.items]
        assert tasks.count("coding") == 10 and tasks.count("search") == 10

    def test_scripts_cover_manifest(self, pack):
        manifest = load_manifest(pack / "manifest.jsonl")
        scripts = load_scripts(pack / "scripts.jsonl")
        assert set(scripts) == {item.id for item in manifest.items}

    def test_images_exist(self, pack):
        manifest = load_manifest(pack / "manifest.jsonl")
        for item in manifest.items:
            assert (pack / item.image_path).is_file()

    def test_rebuild_is_byte_identical(self, tmp_path):
        a = build_fixture_pack(tmp_path / "a", seed=0)
        b = build_fixture_pack(tmp_path / "b", seed=0)
        for name in ("manifest.jsonl", "corpus.jsonl", "scripts.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestCli:
    def test_usage_error_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--bogus-flag", "score"])
        assert exc.value.code == 2

    def test_offline_rollout_and_score(self, pack, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["--offline", "rollout", "--manifest", str(pack / "manifest.jsonl"),
                     "--out", str(out)]) == 0
        assert (out / "transcripts.jsonl").is_file()
        assert main(["score", "--manifest", str(pack / "manifest.jsonl"),
                     "--run", str(out / "predictions.jsonl"), "--format", "csv"]) == 0
        csv = capsys.readouterr().out.splitlines()[-1]
        assert csv == "100.00,100.00,100.00,100.00,100.00,100.00"

    def test_validate_clean_manifest(self, pack):
        assert main(["validate", "--manifest", str(pack / "manifest.jsonl")]) == 0

    def test_validate_duplicate_id_exit_1(self, pack, tmp_path, capsys):
        lines = (pack / "manifest.jsonl").read_text().splitlines()
        lines.append(lines[0])
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n", encoding="utf-8")
        assert main(["validate", "--manifest", str(bad)]) == 1

    def test_validate_quota_mismatch(self, pack, tmp_path):
        rc = main(["validate", "--manifest", str(pack / "manifest.jsonl"), "--plan", "test"])
        assert rc == 1

    def test_score_unknown_id_exit_1(self, pack, tmp_path):
        run = tmp_path / "run.jsonl"
        run.write_text(json.dumps({"id": "ghost", "answer": "x"}) + "\n", encoding="utf-8")
        assert main(["score", "--manifest", str(pack / "manifest.jsonl"),
                     "--run", str(run)]) == 1

    def test_reward_subcommand(self, pack, tmp_path):
        out = tmp_path / "run"
        main(["--offline", "rollout", "--manifest", str(pack / "manifest.jsonl"),
              "--out", str(out)])
        rewards_path = tmp_path / "rewards.jsonl"
        assert main(["--offline", "reward", "--manifest", str(pack / "manifest.jsonl"),
                     "--transcripts", str(out / "transcripts.jsonl"),
                     "--out", str(rewards_path)]) == 0
        records = [json.loads(l) for l in rewards_path.read_text().splitlines()]
        assert len(records) == 20
        assert all(rec["format"] == 1 for rec in records)
        assert all(rec["total"] == rec["format"] + rec["accuracy"] for rec in records)

    def test_score_figure(self, pack, tmp_path):
        out = tmp_path / "run"
        main(["--offline", "rollout", "--manifest", str(pack / "manifest.jsonl"),
              "--out", str(out)])
        figure = tmp_path / "fig.png"
        assert main(["score", "--manifest", str(pack / "manifest.jsonl"),
                     "--run", str(out / "predictions.jsonl"),
                     "--figure", str(figure)]) == 0
        assert figure.stat().st_size > 0

    def test_train_toy_with_log_and_figure(self, tmp_path):
        log = tmp_path / "log.jsonl"
        figure = tmp_path / "training.png"
        assert main(["--seed", "0", "train-toy", "--updates", "10",
                     "--log", str(log), "--figure", str(figure)]) == 0
        assert len(log.read_text().splitlines()) == 10
        assert figure.stat().st_size > 0

    def _write_sources(self, tmp_path, n):
        rng = np.random.Generator(np.random.PCG64(0))
        src_dir = tmp_path / "src"
        src_dir.mkdir()
        records = []
        for i in range(n):
            img = ImageBuffer(rng.integers(0, 256, size=(16, 16, 3), dtype=np.int64).astype(np.uint8))
            path = src_dir / f"s{i:03d}.png"
            ik.save_png(img, path)
            records.append({"id": f"s{i:03d}", "image_path": str(path),
                            "question": "what?", "gold_answers": ["thing"]})
        sources = tmp_path / "sources.jsonl"
        sources.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
        return sources

    def test_build_bench_then_validate(self, tmp_path):
        sources = self._write_sources(tmp_path, 72)
        out = tmp_path / "bench"
        assert main(["--seed", "3", "build-bench", "--sources", str(sources),
                     "--plan", "test", "--composite", "1", "--crop", "1",
                     "--out", str(out)]) == 0
        assert main(["validate", "--manifest", str(out / "manifest.jsonl"),
                     "--plan", "test", "--composite", "1", "--crop", "1"]) == 0
        assert len(load_manifest(out / "manifest.jsonl").items) == 72

    def test_build_bench_insufficient_sources_exit_1(self, tmp_path):
        sources = self._write_sources(tmp_path, 5)
        assert main(["build-bench", "--sources", str(sources), "--plan", "test",
                     "--out", str(tmp_path / "bench")]) == 1

    @pytest.mark.skipif(
        importlib.util.find_spec("codeworker") is None,
        reason="worker package not installed",
    )
    def test_offline_rollout_with_worker_backend(self, pack, tmp_path, capsys):
        cfg = tmp_path / "cfg"
        cfg.write_text(f'worker_cmd = "{sys.executable} -m codeworker"\n', encoding="utf-8")
        out = tmp_path / "run"
        assert main(["--config", str(cfg), "--offline", "--backend", "worker",
                     "rollout", "--manifest", str(pack / "manifest.jsonl"),
                     "--out", str(out)]) == 0
        assert main(["score", "--manifest", str(pack / "manifest.jsonl"),
                     "--run", str(out / "predictions.jsonl"), "--format", "csv"]) == 0
        assert capsys.readouterr().out.splitlines()[-1].startswith("100.00,100.00")
