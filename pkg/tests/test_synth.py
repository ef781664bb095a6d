"""Synthetic data generator: determinism, separations, white-window control."""
import numpy as np
import pytest

from mitodet.errors import DataError
from mitodet.infer import plan_tiles
from mitodet.synth import (KIND_DISTRACTOR, KIND_NEGATIVE, KIND_POSITIVE,
                           SynthConfig, synth_hpf, synth_wsi)

CFG = SynthConfig(seed=5)


class TestSynthHpf:
    def test_deterministic(self):
        a, _, _ = synth_hpf(CFG, seed=3)
        b, _, _ = synth_hpf(CFG, seed=3)
        assert np.array_equal(a.pixels, b.pixels)

    def test_zero_positives_empty_annotations(self):
        cfg = SynthConfig(positives_mean=0.0)
        _, annotations, objects = synth_hpf(cfg, seed=1)
        assert annotations == []
        assert all(o.kind != KIND_POSITIVE for o in objects)

    def test_separation_oracle(self):
        _, annotations, objects = synth_hpf(CFG, seed=9)
        centers = [(o.row, o.col) for o in objects]
        for i, a in enumerate(centers):
            for b in centers[i + 1:]:
                assert np.hypot(a[0] - b[0], a[1] - b[1]) >= CFG.min_separation

    def test_annotations_are_exactly_the_positives(self):
        _, annotations, objects = synth_hpf(CFG, seed=11)
        pos = {(o.row, o.col) for o in objects if o.kind == KIND_POSITIVE}
        assert {(a.point.row, a.point.col) for a in annotations} == pos

    def test_objects_fully_inside(self):
        image, _, objects = synth_hpf(CFG, seed=13)
        h, w = image.shape
        for o in objects:
            r = int(np.ceil(o.radius)) + 2
            assert r <= o.row < h - r and r <= o.col < w - r

    def test_intensity_contract(self):
        """Positives and distractors share intensity; negatives differ a lot."""
        image, _, objects = synth_hpf(SynthConfig(positives_mean=6.0), seed=17)

        def center_mean(kind):
            vals = [image.pixels[o.row - 3:o.row + 4, o.col - 3:o.col + 4].mean()
                    for o in objects if o.kind == kind]
            return np.mean(vals)

        pos, dis, neg = (center_mean(k) for k in
                         (KIND_POSITIVE, KIND_DISTRACTOR, KIND_NEGATIVE))
        assert abs(pos - dis) < 5.0
        assert abs(pos - neg) > 40.0

    def test_infeasible_config_rejected(self):
        cfg = SynthConfig(hpf_size=128, positives_mean=30.0, positives_max=30,
                          min_separation=64.0)
        with pytest.raises(DataError):
            synth_hpf(cfg, seed=1)


class TestSynthWsi:
    def test_deterministic(self):
        cfg = SynthConfig(wsi_size=1024)
        a = synth_wsi(cfg, seed=2)
        b = synth_wsi(cfg, seed=2)
        assert np.array_equal(a.pixels, b.pixels)

    def test_all_white_forcing_case(self):
        cfg = SynthConfig(wsi_size=1024, white_fraction=1.0)
        slide = synth_wsi(cfg, seed=3)
        plan = plan_tiles(1024, 1024, cfg.wsi_window, cfg.wsi_overlap)
        for _, r0, c0, _ in plan.windows():
            window = slide.pixels[r0:r0 + 512, c0:c0 + 512]
            assert window.mean() > 230
        assert slide.annotations == []

    def test_white_fraction_near_target(self):
        slide = synth_wsi(CFG, seed=4)
        plan = plan_tiles(CFG.wsi_size, CFG.wsi_size, CFG.wsi_window, CFG.wsi_overlap)
        white = 0
        for _, r0, c0, _ in plan.windows():
            window = slide.pixels[r0:r0 + 512, c0:c0 + 512]
            if window.mean() > 230:
                white += 1
        fraction = white / plan.num_windows
        assert abs(fraction - CFG.white_fraction) <= 0.05

    def test_annotations_land_in_non_white_windows(self):
        slide = synth_wsi(CFG, seed=6)
        plan = plan_tiles(CFG.wsi_size, CFG.wsi_size, CFG.wsi_window, CFG.wsi_overlap)
        assert slide.annotations
        for ann in slide.annotations:
            hit_dark = False
            for _, r0, c0, _ in plan.windows():
                if r0 <= ann.point.row < r0 + 512 and c0 <= ann.point.col < c0 + 512:
                    window = slide.pixels[r0:r0 + 512, c0:c0 + 512]
                    if window.mean() <= 230:
                        hit_dark = True
            assert hit_dark

    def test_object_separation(self):
        slide = synth_wsi(CFG, seed=8)
        centers = [(o.row, o.col) for o in slide.objects]
        for i, a in enumerate(centers):
            for b in centers[i + 1:]:
                assert np.hypot(a[0] - b[0], a[1] - b[1]) >= CFG.min_separation
