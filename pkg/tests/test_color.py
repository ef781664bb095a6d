"""LAB conversion and contrast transfer."""
import numpy as np
import pytest

from mitodet.color import (LabStats, contrast_transfer, lab_stats, lab_to_rgb,
                           rgb_to_lab, transfer_lab)
from mitodet.errors import DataError


def _random_image(seed, h=24, w=24):
    return np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)


class TestLabConversion:
    def test_white_point(self):
        lab = rgb_to_lab(np.full((1, 1, 3), 255, np.uint8))[0, 0]
        assert abs(lab[0] - 100.0) < 0.01
        assert abs(lab[1]) < 0.01 and abs(lab[2]) < 0.01

    def test_black_point(self):
        lab = rgb_to_lab(np.zeros((1, 1, 3), np.uint8))[0, 0]
        assert np.all(np.abs(lab) < 0.01)

    def test_white_point_inverse(self):
        rgb = lab_to_rgb(np.array([[[100.0, 0.0, 0.0]]]))
        assert tuple(rgb[0, 0]) == (255, 255, 255)

    def test_out_of_gamut_clamps(self):
        rgb = lab_to_rgb(np.array([[[50.0, 200.0, 0.0]]]))
        assert rgb.dtype == np.uint8  # no error, channels clamped

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            lab_to_rgb(np.array([[[np.nan, 0.0, 0.0]]]))

    @pytest.mark.parametrize("seed", range(5))
    def test_roundtrip_within_one_level(self, seed):
        img = _random_image(seed)
        back = lab_to_rgb(rgb_to_lab(img))
        assert np.abs(back.astype(int) - img.astype(int)).max() <= 1


class TestLabStats:
    def test_constant_image_zero_std(self):
        stats = lab_stats(np.full((8, 8, 3), 77, np.uint8))
        assert np.allclose(stats.std, 0.0)

    def test_two_pixel_closed_form(self):
        # Build two gray pixels, read back their L values, check mean/std of L.
        img = np.array([[[90, 90, 90], [150, 150, 150]]], np.uint8)
        lab = rgb_to_lab(img)
        l0, l1 = lab[0, 0, 0], lab[0, 1, 0]
        stats = lab_stats(img)
        assert abs(stats.mean[0] - (l0 + l1) / 2) < 1e-9
        assert abs(stats.std[0] - abs(l0 - l1) / 2) < 1e-9

    def test_matches_two_pass_oracle(self):
        img = _random_image(7, 31, 17)
        lab = rgb_to_lab(img).reshape(-1, 3)
        stats = lab_stats(img)
        for c in range(3):
            mean = sum(lab[:, c]) / len(lab)
            var = sum((v - mean) ** 2 for v in lab[:, c]) / len(lab)
            assert abs(stats.mean[c] - mean) < 1e-9
            assert abs(stats.std[c] - np.sqrt(var)) < 1e-9

    def test_empty_image_rejected(self):
        with pytest.raises(DataError):
            lab_stats(np.zeros((0, 3, 3), np.uint8))


class TestContrastTransfer:
    def test_self_transfer_identity(self):
        img = _random_image(11)
        out = contrast_transfer(img, lab_stats(img))
        assert np.abs(out.astype(int) - img.astype(int)).max() <= 1

    @pytest.mark.parametrize("seed", range(4))
    def test_preclamp_stats_match_target(self, seed):
        img = _random_image(seed, 32, 32)
        target = lab_stats(_random_image(seed + 100))
        transferred = transfer_lab(rgb_to_lab(img), target)
        mean = transferred.reshape(-1, 3).mean(axis=0)
        std = transferred.reshape(-1, 3).std(axis=0)
        assert np.abs(mean - np.asarray(target.mean)).max() < 1e-2
        assert np.abs(std - np.asarray(target.std)).max() < 2e-2

    def test_constant_image_lands_on_target_mean(self):
        img = np.full((8, 8, 3), 120, np.uint8)
        target = lab_stats(_random_image(3))
        transferred = transfer_lab(rgb_to_lab(img), target)
        assert np.abs(transferred.reshape(-1, 3).mean(axis=0)
                      - np.asarray(target.mean)).max() < 1e-6

    def test_non_finite_target_rejected(self):
        img = _random_image(1)
        with pytest.raises(DataError):
            contrast_transfer(img, LabStats((np.inf, 0, 0), (1, 1, 1)))
