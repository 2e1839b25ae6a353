import time

import numpy as np
import pytest

from codeworker.runtime import coerce_image, run_user_code


@pytest.fixture
def img():
    rng = np.random.Generator(np.random.PCG64(2))
    return rng.integers(0, 256, size=(10, 10, 3), dtype=np.int64).astype(np.uint8)


class TestVerbPath:
    def test_verb_script_runs_on_kernels(self, img):
        result = run_user_code("rotate 180\nsave out", {"in": img})
        assert result["status"] == "ok"
        assert np.array_equal(result["images"]["out"], np.rot90(img, 2))


class TestPythonPath:
    def test_rotation_involution(self, img):
        code = 'save("out", np.rot90(np.rot90(images["in"], 2), 2))'
        result = run_user_code(code, {"in": img})
        assert result["status"] == "ok"
        assert np.array_equal(result["images"]["out"], img)

    def test_stdout_captured(self):
        result = run_user_code('print("hello", 1 + 1)', {})
        assert result["status"] == "ok"
        assert result["stdout"] == "hello 2\n"

    def test_identifier_bindings(self, img):
        result = run_user_code('save("out", picture)', {"picture": img})
        assert result["status"] == "ok"

    def test_runtime_error_reported(self):
        result = run_user_code("1 / 0", {})
        assert result["status"] == "runtime_error"
        assert "ZeroDivisionError" in result["stderr"]

    def test_syntax_error_reported(self):
        result = run_user_code("def broken(:", {})
        assert result["status"] == "runtime_error"
        assert "SyntaxError" in result["stderr"]

    def test_fresh_namespace_between_requests(self):
        assert run_user_code("leak = 41", {})["status"] == "ok"
        result = run_user_code("print(leak)", {})
        assert result["status"] == "runtime_error"
        assert "NameError" in result["stderr"]

    def test_float_images_coerced_on_save(self, img):
        code = 'save("out", images["in"] * 0.5)'
        result = run_user_code(code, {"in": img})
        assert result["status"] == "ok"
        expected = np.clip(np.floor(img.astype(np.float64) * 0.5 + 0.5), 0, 255).astype(np.uint8)
        assert np.array_equal(result["images"]["out"], expected)

    def test_allowlisted_import_works(self):
        result = run_user_code("import math\nprint(math.floor(2.5))", {})
        assert result["status"] == "ok"
        assert result["stdout"] == "2\n"


class TestGuards:
    def test_denied_import_names_capability(self):
        result = run_user_code("import socket", {})
        assert result["status"] == "runtime_error"
        assert "socket" in result["stderr"] and "denied" in result["stderr"]

    def test_denied_subprocess(self):
        result = run_user_code("import subprocess", {})
        assert result["status"] == "runtime_error"
        assert "subprocess" in result["stderr"]

    def test_open_outside_workdir_denied(self):
        result = run_user_code('open("/etc/hostname")', {})
        assert result["status"] == "runtime_error"
        assert "denied" in result["stderr"]

    def test_relative_write_lands_in_workdir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        result = run_user_code('open("x.txt", "w").write("hi")', {})
        assert result["status"] == "ok"
        assert list(tmp_path.iterdir()) == []

    def test_dunder_import_guarded(self):
        result = run_user_code('__import__("os")', {})
        assert result["status"] == "runtime_error"
        assert "os" in result["stderr"]


class TestLimits:
    def test_infinite_loop_times_out_within_grace(self):
        start = time.monotonic()
        result = run_user_code("while True: pass", {}, wall_time=1.0)
        elapsed = time.monotonic() - start
        assert result["status"] == "timeout"
        assert elapsed <= 2.0
        assert result["images"] == {}

    def test_try_except_loop_with_work_times_out(self):
        # except Exception cannot catch the BaseException-derived timeout
        code = "while True:\n    try:\n        x = sum(range(8))\n    except Exception:\n        pass\n"
        start = time.monotonic()
        result = run_user_code(code, {}, wall_time=1.0)
        assert result["status"] == "timeout"
        assert time.monotonic() - start <= 2.0

    def test_swallowed_timeout_refires(self):
        # a single swallow of the first alarm is recovered by the interval
        code = (
            "caught = 0\n"
            "while True:\n"
            "    try:\n"
            "        x = sum(range(8))\n"
            "    except BaseException:\n"
            "        caught += 1\n"
            "        if caught >= 2:\n"
            "            raise\n"
        )
        start = time.monotonic()
        result = run_user_code(code, {}, wall_time=0.5)
        assert result["status"] == "timeout"
        assert time.monotonic() - start <= 2.0


class TestCoerce:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            coerce_image(np.zeros((4, 4), dtype=np.uint8))

    def test_uint8_passthrough(self, img):
        assert coerce_image(img).dtype == np.uint8
