"""Matching metric, PRF and threshold sweeps."""
import numpy as np
import pytest

from mitodet.core import Detection, Point
from mitodet.errors import DataError
from mitodet.metrics import (case_stats, f1_score, match_detections,
                             max_f1_sweep, max_f1_sweep_pooled, prf,
                             read_pr_csv, write_pr_csv)


def _det(r, c, s):
    return Detection(Point(r, c), s)


class TestMatchDetections:
    def test_exact_coincidence(self):
        gts = [Point(10, 10), Point(50, 50), Point(90, 90)]
        dets = [_det(10, 10, 0.3), _det(50, 50, 0.9), _det(90, 90, 0.6)]
        m = match_detections(dets, gts)
        assert (m.tp, m.fp, m.fn) == (3, 0, 0)

    def test_nearest_unmatched_gt_hand_example(self):
        gts = [Point(0, 0), Point(0, 40)]
        dets = [_det(0, 15, 0.9)]
        m = match_detections(dets, gts)
        assert (m.tp, m.fp, m.fn) == (1, 0, 1)
        assert m.pairs == [(0, 0)]  # matched to (0,0): distance 15 < 25
        p, r, f1 = prf(m)
        assert (p, r) == (1.0, 0.5)
        assert abs(f1 - 2 / 3) < 1e-12

    def test_radius_boundary_inclusive_at_30(self):
        m = match_detections([_det(0, 30, 0.9)], [Point(0, 0)], radius=30)
        assert (m.tp, m.fp, m.fn) == (1, 0, 0)

    def test_distance_31_is_unmatched(self):
        m = match_detections([_det(0, 31, 0.9)], [Point(0, 0)], radius=30)
        assert (m.tp, m.fp, m.fn) == (0, 1, 1)
        assert prf(m)[2] == 0.0

    def test_each_gt_matched_once(self):
        gts = [Point(0, 0)]
        dets = [_det(0, 5, 0.9), _det(0, 8, 0.8)]
        m = match_detections(dets, gts)
        assert (m.tp, m.fp, m.fn) == (1, 1, 0)

    def test_greedy_by_score_order(self):
        # lower-scored det is closer; higher-scored det takes the GT first
        gts = [Point(0, 0)]
        dets = [_det(0, 20, 0.9), _det(0, 2, 0.1)]
        m = match_detections(dets, gts)
        assert m.pairs == [(0, 0)]

    def test_counts_invariants(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n_d, n_g = rng.integers(0, 30), rng.integers(0, 30)
            dets = [_det(int(r), int(c), float(s)) for r, c, s in
                    zip(rng.integers(0, 200, n_d), rng.integers(0, 200, n_d),
                        rng.random(n_d))]
            gts = [Point(int(r), int(c)) for r, c in
                   zip(rng.integers(0, 200, n_g), rng.integers(0, 200, n_g))]
            m = match_detections(dets, gts)
            assert m.tp + m.fn == len(gts)
            assert m.tp + m.fp == len(dets)
            assert len({i for i, _ in m.pairs}) == len(m.pairs)
            assert len({j for _, j in m.pairs}) == len(m.pairs)
            for i, j in m.pairs:
                assert dets[i].point.distance_to(gts[j]) <= 30


class TestPrf:
    def test_reported_operating_point(self):
        # published precision/recall pair reproduces its F1 within 1e-3
        assert abs(f1_score(0.722, 0.661) - 0.690) <= 1e-3

    def test_degenerate_zero_convention(self):
        from mitodet.metrics import MatchResult
        p, r, f1 = prf(MatchResult(0, 0, 0, []))
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        from mitodet.metrics import MatchResult
        assert prf(MatchResult(5, 0, 0, [(i, i) for i in range(5)])) == (1.0, 1.0, 1.0)


class TestMaxF1Sweep:
    def test_empty_detections(self):
        out = max_f1_sweep([], [Point(0, 0)])
        assert out.best_f1 == 0.0
        assert [pt.threshold for pt in out.points] == [0.5]

    def test_two_point_sweep_by_hand(self):
        gts = [Point(100, 100)]
        dets = [_det(100, 100, 0.9), _det(300, 300, 0.4)]
        out = max_f1_sweep(dets, gts)
        assert out.best_f1 == 1.0
        # both 0.5 and 0.9 drop the false det; the lowest winning threshold is kept
        assert out.best_threshold == 0.5
        at_09 = next(pt for pt in out.points if pt.threshold == 0.9)
        assert at_09.f1 == 1.0
        # at threshold 0.4 both survive: P=0.5, R=1 -> F1=2/3
        low = next(pt for pt in out.points if pt.threshold == 0.4)
        assert abs(low.f1 - 2 / 3) < 1e-12

    def test_max_dominates_fixed_threshold(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n = int(rng.integers(1, 20))
            dets = [_det(int(r), int(c), float(s)) for r, c, s in
                    zip(rng.integers(0, 300, n), rng.integers(0, 300, n),
                        rng.random(n))]
            gts = [Point(int(r), int(c)) for r, c in
                   zip(rng.integers(0, 300, 5), rng.integers(0, 300, 5))]
            out = max_f1_sweep(dets, gts)
            at_half = next(pt for pt in out.points if pt.threshold == 0.5)
            assert out.best_f1 >= at_half.f1

    def test_lowest_threshold_attaining_max(self):
        gts = [Point(0, 0)]
        dets = [_det(0, 0, 0.8)]
        out = max_f1_sweep(dets, gts)
        assert out.best_threshold == 0.5  # 0.5 already attains F1=1

    def test_monotone_score_map_invariance(self):
        rng = np.random.default_rng(9)
        dets = [_det(int(r), int(c), float(s)) for r, c, s in
                zip(rng.integers(0, 300, 15), rng.integers(0, 300, 15),
                    rng.random(15))]
        gts = [Point(int(r), int(c)) for r, c in
               zip(rng.integers(0, 300, 6), rng.integers(0, 300, 6))]
        base = max_f1_sweep(dets, gts)
        mapped = [Detection(d.point, float(np.sqrt(d.score))) for d in dets]
        out = max_f1_sweep(mapped, gts)
        assert abs(out.best_f1 - base.best_f1) < 1e-12

    def test_tp_monotone_as_threshold_rises(self):
        rng = np.random.default_rng(11)
        dets = [_det(int(r), int(c), float(s)) for r, c, s in
                zip(rng.integers(0, 100, 25), rng.integers(0, 100, 25),
                    rng.random(25))]
        gts = [Point(int(r), int(c)) for r, c in
               zip(rng.integers(0, 100, 10), rng.integers(0, 100, 10))]
        out = max_f1_sweep(dets, gts)
        recalls = [pt.recall for pt in out.points]  # thresholds ascend
        assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:]))

    def test_pooled_combines_images(self):
        pairs = [([_det(0, 0, 0.9)], [Point(0, 0)]),
                 ([], [Point(5, 5)])]
        out = max_f1_sweep_pooled(pairs)
        best = max(pt.f1 for pt in out.points)
        assert abs(best - 2 / 3) < 1e-12  # tp=1, fn=1, fp=0 -> P=1, R=0.5


class TestCaseStats:
    def test_closed_form(self):
        mean, std = case_stats([0.5, 0.7])
        assert abs(mean - 0.6) < 1e-15
        assert abs(std - 0.1) < 1e-15

    def test_single_case(self):
        assert case_stats([0.64]) == (0.64, 0.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(4)
        values = list(rng.random(50))
        mean, std = case_stats(values)
        m2 = sum(values) / 50
        s2 = (sum((v - m2) ** 2 for v in values) / 50) ** 0.5
        assert abs(mean - m2) < 1e-12 and abs(std - s2) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            case_stats([])


def test_pr_csv_roundtrip(tmp_path):
    gts = [Point(0, 0), Point(100, 100)]
    dets = [_det(0, 0, 0.9), _det(100, 102, 0.7), _det(50, 50, 0.3)]
    out = max_f1_sweep(dets, gts)
    path = tmp_path / "pr.csv"
    write_pr_csv(out.points, path)
    header = path.read_text().splitlines()[0]
    assert header == "threshold,precision,recall,f1"
    back = read_pr_csv(path)
    assert len(back) == len(out.points)
    for a, b in zip(out.points, back):
        assert abs(a.f1 - b.f1) < 1e-6
