"""Unit tests for quality_service.py."""
import math

import numpy as np
import pytest
from scipy import ndimage

import varigen.services.quality_service as under_test
from varigen.errors import EmptyImageSet, ShapeMismatch, UnsupportedImageShape


def windowed_ssim(x, y):
    def smooth(channel):
        return ndimage.gaussian_filter(channel, sigma=1.5, truncate=3.5, mode="reflect")

    values = []
    for c in range(x.shape[2]):
        a, b = x[:, :, c], y[:, :, c]
        mu_a, mu_b = smooth(a), smooth(b)
        var_a = smooth(a * a) - mu_a**2
        var_b = smooth(b * b) - mu_b**2
        cov = smooth(a * b) - mu_a * mu_b
        c1, c2 = 0.01**2, 0.03**2
        index = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
            (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        )
        values.append(index[5:-5, 5:-5].mean())
    return float(np.mean(values))


def noisy(image, level, seed=0):
    noise = np.random.default_rng(seed).normal(scale=level, size=image.shape)
    return np.clip(image + noise, 0.0, 1.0)


@pytest.fixture()
def image():
    return np.random.default_rng(42).uniform(size=(24, 24, 3))


class TestSsim:
    def test_identical_images_should_score_one(self, image):
        assert under_test.ssim(image, image) == pytest.approx(1.0, abs=1e-12)

    def test_value_should_match_windowed_oracle(self, image):
        other = noisy(image, 0.1)

        assert under_test.ssim(image, other) == pytest.approx(
            windowed_ssim(image, other), abs=1e-6
        )

    def test_value_should_be_symmetric(self, image):
        other = noisy(image, 0.2)

        assert under_test.ssim(image, other) == pytest.approx(
            under_test.ssim(other, image), abs=1e-12
        )

    def test_grayscale_images_should_be_accepted(self):
        gray = np.random.default_rng(0).uniform(size=(16, 16))

        assert under_test.ssim(gray, gray) == pytest.approx(1.0, abs=1e-12)

    def test_small_images_should_raise(self):
        with pytest.raises(UnsupportedImageShape):
            under_test.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_mismatched_shapes_should_raise(self, image):
        with pytest.raises(ShapeMismatch):
            under_test.ssim(image, image[:16, :16])


class TestPsnr:
    @pytest.mark.parametrize("mse,expected", [(0.01, 20.0), (1.0, 0.0), (1e-4, 40.0)])
    def test_psnr_from_mse(self, mse, expected):
        assert under_test.psnr_from_mse(mse) == pytest.approx(expected)

    def test_zero_error_should_be_infinite(self, image):
        assert math.isinf(under_test.psnr_from_mse(0.0))
        assert math.isinf(under_test.psnr(image, image.copy()))

    def test_value_should_drop_as_noise_grows(self, image):
        values = [under_test.psnr(image, noisy(image, level)) for level in (0.01, 0.03, 0.1, 0.3)]

        assert values == sorted(values, reverse=True)

    def test_constant_offset_should_match_formula(self):
        a = np.full((4, 4, 1), 0.5)
        b = np.full((4, 4, 1), 0.6)

        assert under_test.psnr(a, b) == pytest.approx(20.0)


class TestQualityTable:
    def test_rows_should_follow_set_order(self, image):
        rows = under_test.quality_table(
            [image], [("noisy", [noisy(image, 0.1)]), ("copy", [image.copy()])]
        )

        assert [row.label for row in rows] == ["noisy", "copy"]
        assert rows[1].identical
        assert rows[1].ssim == pytest.approx(1.0, abs=1e-12)
        assert rows[0].psnr_db < rows[1].psnr_db

    def test_images_should_be_compared_with_nearest_original(self, image):
        other = np.random.default_rng(7).uniform(size=image.shape)

        rows = under_test.quality_table([other, image], [("copy", [image.copy()])])

        assert rows[0].identical

    def test_nearest_original_should_prefer_first_on_ties(self):
        image = np.zeros((4, 4, 1))
        first = np.full((4, 4, 1), 0.5)
        second = np.full((4, 4, 1), -0.5)

        assert under_test.nearest_original(image, [first, second]) is first

    def test_plugins_should_add_columns(self, image):
        class CountPlugin:
            name = "count"

            def __call__(self, originals, images):
                return len(originals) + len(images)

        rows = under_test.quality_table([image], [("copy", [image, image])], [CountPlugin()])

        assert rows[0].plugins == {"count": 3.0}

    def test_no_originals_should_raise(self, image):
        with pytest.raises(EmptyImageSet):
            under_test.quality_table([], [("copy", [image])])

    def test_empty_set_should_raise(self, image):
        with pytest.raises(EmptyImageSet):
            under_test.quality_table([image], [("empty", [])])
