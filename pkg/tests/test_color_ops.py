"""HSV region operations against per-pixel reference conversions."""

import colorsys

import numpy as np
import pytest

from iceg.color_ops import apply_color_to_region, circular_hue_difference, region_mean_hsv, shift_value
from iceg.errors import ParameterError


def full(shape=(8, 8)):
    return np.ones(shape, dtype=bool)


class TestRegionMeanHsv:
    def test_uniform_pure_red(self):
        img = np.zeros((4, 4, 3), dtype=np.float32)
        img[..., 0] = 0.8
        summary = region_mean_hsv(img, full((4, 4)))
        assert summary.hue == pytest.approx(0.0, abs=1e-6)
        assert summary.sat == pytest.approx(1.0, abs=1e-6)
        assert summary.val == pytest.approx(0.8, abs=1e-6)
        assert not summary.hue_degenerate

    def test_circular_mean_wraps_at_zero(self):
        # half the pixels at hue 350, half at hue 10, all fully saturated:
        # the unit-vector mean direction is 0, not 180
        img = np.zeros((2, 2, 3), dtype=np.float64)
        img[0, :] = colorsys.hsv_to_rgb(350 / 360.0, 1.0, 1.0)
        img[1, :] = colorsys.hsv_to_rgb(10 / 360.0, 1.0, 1.0)
        summary = region_mean_hsv(img, full((2, 2)))
        assert circular_hue_difference(summary.hue, 0.0) < 0.1

    def test_saturation_weighting(self):
        # a nearly gray green pixel should barely pull the hue of a saturated red
        img = np.zeros((1, 2, 3), dtype=np.float64)
        img[0, 0] = colorsys.hsv_to_rgb(0.0, 1.0, 1.0)
        img[0, 1] = colorsys.hsv_to_rgb(120 / 360.0, 0.001, 1.0)
        summary = region_mean_hsv(img, full((1, 2)))
        assert circular_hue_difference(summary.hue, 0.0) < 0.5

    def test_grayscale_region_flags_degenerate_hue(self):
        img = np.full((4, 4, 3), 0.5, dtype=np.float32)
        summary = region_mean_hsv(img, full((4, 4)))
        assert summary.hue == 0.0
        assert summary.hue_degenerate

    def test_empty_region_rejected(self):
        with pytest.raises(ParameterError):
            region_mean_hsv(np.zeros((4, 4, 3), dtype=np.float32), np.zeros((4, 4), dtype=bool))


class TestApplyColor:
    def test_value_channel_preserved_on_gray_gradient(self):
        img = np.repeat(np.linspace(0.1, 0.9, 16, dtype=np.float32)[:, None], 8, axis=1)
        img = np.repeat(img[..., None], 3, axis=2)
        out = apply_color_to_region(img, full((16, 8)), 0.0, 1.0)
        v_in = img.max(axis=2)
        v_out = out.max(axis=2)
        assert np.abs(v_in - v_out).max() <= 1e-6
        assert out[..., 0].mean() > out[..., 1].mean()  # red tint took

    def test_unmasked_pixels_bit_identical(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (12, 12, 3)).astype(np.float32)
        mask = rng.uniform(0, 1, (12, 12)) > 0.5
        out = apply_color_to_region(img, mask, 120.0, 0.6)
        assert np.array_equal(out[~mask], img[~mask])

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (10, 10, 3)).astype(np.float32)
        mask = rng.uniform(0, 1, (10, 10)) > 0.4
        once = apply_color_to_region(img, mask, 210.0, 0.5)
        twice = apply_color_to_region(once, mask, 210.0, 0.5)
        assert np.array_equal(once, twice)

    def test_matches_colorsys_reference_per_pixel(self):
        img = np.array(
            [[[0.2, 0.5, 0.9], [0.9, 0.1, 0.3]], [[0.4, 0.4, 0.4], [0.0, 1.0, 0.5]]], dtype=np.float64
        )
        out = apply_color_to_region(img, full((2, 2)), 210.0, 0.5)
        for r in range(2):
            for c in range(2):
                _, _, v = colorsys.rgb_to_hsv(*img[r, c])
                want = colorsys.hsv_to_rgb(210.0 / 360.0, 0.5, v)
                assert np.allclose(out[r, c], want, atol=1e-9), (r, c)

    def test_output_in_unit_range(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        out = apply_color_to_region(img, full(), 300.0, 1.0)
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("hue,sat", [(-1.0, 0.5), (360.0, 0.5), (30.0, -0.1), (30.0, 1.5)])
    def test_bad_parameters_rejected(self, hue, sat):
        img = np.zeros((4, 4, 3), dtype=np.float32)
        with pytest.raises(ParameterError):
            apply_color_to_region(img, full((4, 4)), hue, sat)

    def test_mask_shape_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            apply_color_to_region(np.zeros((4, 4, 3), dtype=np.float32), np.ones((3, 3), dtype=bool), 0.0, 0.5)


class TestShiftValue:
    def test_zero_delta_is_identity(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (6, 6, 3)).astype(np.float32)
        out = shift_value(img, full((6, 6)), 0.0)
        assert np.array_equal(out, img)

    def test_full_positive_shift_saturates_value(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (6, 6, 3)).astype(np.float32)
        out = shift_value(img, full((6, 6)), 1.0)
        assert np.abs(out.max(axis=2) - 1.0).max() < 1e-6

    def test_quarter_shift_on_mid_gray(self):
        img = np.full((4, 4, 3), 0.5, dtype=np.float32)
        out = shift_value(img, full((4, 4)), 0.25)
        assert np.abs(out - 0.75).max() < 1e-6  # gray stays gray, V = 0.5 + 0.25

    def test_unmasked_untouched_and_hue_preserved(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0.1, 0.9, (8, 8, 3)).astype(np.float32)
        mask = rng.uniform(0, 1, (8, 8)) > 0.5
        out = shift_value(img, mask, -0.2)
        assert np.array_equal(out[~mask], img[~mask])
        from matplotlib.colors import rgb_to_hsv

        hin = rgb_to_hsv(img[mask])
        hout = rgb_to_hsv(out[mask])
        keep = (hin[:, 1] > 1e-3) & (hout[:, 2] > 1e-3)  # hue defined on both sides
        assert np.abs(hin[keep, 0] - hout[keep, 0]).max() < 1e-5

    def test_delta_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            shift_value(np.zeros((4, 4, 3), dtype=np.float32), full((4, 4)), 1.5)
