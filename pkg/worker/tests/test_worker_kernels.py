import numpy as np
import pytest

from codeworker import kernels


@pytest.fixture
def img():
    rng = np.random.Generator(np.random.PCG64(11))
    return rng.integers(0, 256, size=(14, 9, 3), dtype=np.int64).astype(np.uint8)


class TestKernels:
    def test_rotate_full_circle(self, img):
        out = img
        for _ in range(4):
            out = kernels.rotate_cw(out, 90)
        assert np.array_equal(out, img)

    def test_rotate_dimension_swap(self, img):
        out = kernels.rotate_cw(img, 90)
        assert out.shape == (img.shape[1], img.shape[0], 3)

    def test_rotate_rejects_odd_angle(self, img):
        with pytest.raises(ValueError):
            kernels.rotate_cw(img, 45)

    def test_crop_bounds(self, img):
        with pytest.raises(ValueError):
            kernels.crop_rect(img, 0, 0, 99999, 1)
        out = kernels.crop_rect(img, 1, 2, 3, 4)
        assert out.shape == (4, 3, 3)
        assert np.array_equal(out, img[2:6, 1:4])

    def test_brightness_half(self):
        arr = np.full((1, 1, 3), 100, dtype=np.uint8)
        assert kernels.scale_brightness(arr, 0.5)[0, 0, 0] == 50

    def test_brightness_clamps(self):
        arr = np.full((1, 1, 3), 200, dtype=np.uint8)
        assert kernels.scale_brightness(arr, 1.5)[0, 0, 0] == 255

    def test_blur_constant_fixed_point(self):
        arr = np.full((8, 8, 3), 90, dtype=np.uint8)
        assert np.array_equal(kernels.blur_gaussian(arr, 1.7), arr)

    def test_median_removes_speck(self):
        arr = np.zeros((3, 3, 3), dtype=np.uint8)
        arr[1, 1] = 255
        assert kernels.median_filter(arr, 1)[1, 1, 0] == 0

    def test_check_image(self):
        with pytest.raises(ValueError):
            kernels.check_image(np.zeros((3, 3), dtype=np.uint8))


class TestVerbScripts:
    def test_parse_and_run(self, img):
        saved = kernels.run_verb_script("rotate 90\nrotate 270\nsave out", {"in": img})
        assert np.array_equal(saved["out"], img)

    def test_empty_script_rejected(self):
        with pytest.raises(kernels.VerbScriptError, match="empty"):
            kernels.parse_verbs("")

    def test_unknown_verb_names_line(self):
        with pytest.raises(kernels.VerbScriptError, match="line 2"):
            kernels.parse_verbs("rotate 90\nsharpen 3")

    def test_multiple_saves(self, img):
        saved = kernels.run_verb_script("save a\nrotate 180\nsave b", {"in": img})
        assert np.array_equal(saved["a"], img)
        assert np.array_equal(saved["b"], kernels.rotate_cw(img, 180))

    def test_ambiguous_inputs(self, img):
        with pytest.raises(kernels.VerbScriptError, match="ambiguous"):
            kernels.run_verb_script("save out", {"a": img, "b": img})
