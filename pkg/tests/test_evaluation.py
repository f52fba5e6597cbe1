import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqkitti.datamodel import Box3D, BoxClass
from seqkitti.errors import EmptyGroundTruth, InvariantViolation
from seqkitti.evaluation import (
    DEFAULT_THRESHOLDS,
    EvalConfig,
    EvalReport,
    Tally,
    average_precision,
    bev_iou,
    bev_iou_matrix,
    evaluate,
    heading_weight,
    interpolated_ap,
    iou_3d,
    iou_3d_matrix,
    match_detections,
    pr_curve,
)

from seqkitti.geometry import wrap_heading

from conftest import random_box
from oracles import brute_ap, brute_evaluate, brute_match, shapely_bev_iou, shapely_iou_3d

V, P, C = BoxClass.VEHICLE, BoxClass.PEDESTRIAN, BoxClass.CYCLIST


def box(x=0.0, y=0.0, z=0.0, l=4.0, w=2.0, h=1.5, heading=0.0, cls=V, score=None, num_points=None):
    return Box3D((x, y, z), l, w, h, heading, cls, score, num_points)


class TestIoU:
    def test_rotated_unit_square(self):
        a = box(l=1, w=1)
        b = box(l=1, w=1, heading=math.pi / 4)
        octagon = 2 * (math.sqrt(2) - 1)
        assert bev_iou(a, b) == pytest.approx(octagon / (2 - octagon), abs=1e-12)
        assert bev_iou(a, b) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_identical_is_exactly_one(self, rng):
        for _ in range(50):
            b = random_box(rng)
            assert bev_iou(b, b) == 1.0
            assert iou_3d(b, b) == 1.0

    def test_half_height_overlap(self):
        a = box()
        b = box(z=0.75)
        assert iou_3d(a, b) == pytest.approx(1 / 3, abs=1e-12)
        assert bev_iou(a, b) == 1.0

    def test_disjoint(self):
        assert bev_iou(box(), box(x=100)) == 0.0
        assert iou_3d(box(), box(z=10)) == 0.0

    def test_matrix_shape_and_impls(self, impl, rng):
        a = [random_box(rng, extent=3) for _ in range(7)]
        b = [random_box(rng, extent=3) for _ in range(5)]
        m = bev_iou_matrix(a, b, impl=impl)
        assert m.shape == (7, 5)
        for i in range(7):
            for j in range(5):
                assert m[i, j] == pytest.approx(shapely_bev_iou(a[i], b[j]), abs=1e-9)
        m3 = iou_3d_matrix(a, b, impl=impl)
        for i in range(7):
            for j in range(5):
                assert m3[i, j] == pytest.approx(shapely_iou_3d(a[i], b[j]), abs=1e-9)
        assert bev_iou_matrix([], b).shape == (0, 5)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_iou_symmetry_and_polygon_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng, extent=2), random_box(rng, extent=2)
    assert abs(bev_iou(a, b) - bev_iou(b, a)) <= 1e-12
    assert abs(iou_3d(a, b) - iou_3d(b, a)) <= 1e-12
    assert abs(bev_iou(a, b) - shapely_bev_iou(a, b)) < 1e-9
    assert 0.0 <= bev_iou(a, b) <= 1.0


class TestMatching:
    def test_just_below_threshold_unmatched(self):
        d = 4 * 0.31 / 1.69  # (4 - d) / (4 + d) = 0.69 for 4 x 2 boxes offset along x
        gt = box()
        pred = box(x=d, score=0.9)
        assert shapely_bev_iou(pred, gt) == pytest.approx(0.69, abs=1e-12)
        m = match_detections([pred], [gt])
        assert m.pairs == [] and m.unmatched_predictions == [0] and m.unmatched_gts == [0]
        d = 4 * 0.29 / 1.71  # IoU 0.71
        m = match_detections([box(x=d, score=0.9)], [gt])
        assert [p[:2] for p in m.pairs] == [(0, 0)]

    def test_score_order_and_tie_to_lower_gt(self):
        gts = [box(x=-0.5, l=1, w=1, cls=P), box(x=0.5, l=1, w=1, cls=P)]
        pred = box(x=0.0, l=1, w=1, cls=P, score=0.5)
        m = match_detections([pred], gts, threshold=0.3)
        assert [p[:2] for p in m.pairs] == [(0, 0)]
        # the higher-scoring prediction claims the gt first
        preds = [box(x=0.1, l=1, w=1, cls=P, score=0.2), box(x=0.05, l=1, w=1, cls=P, score=0.9)]
        m = match_detections(preds, [box(l=1, w=1, cls=P)], threshold=0.5)
        assert [p[:2] for p in m.pairs] == [(1, 0)] and m.unmatched_predictions == [0]

    def test_class_mismatch_never_matches(self):
        m = match_detections([box(cls=P, score=1.0)], [box()])
        assert m.pairs == []

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        gts = [random_box(rng, extent=4) for _ in range(6)]
        preds = [random_box(rng, extent=4, score=True) for _ in range(8)]
        th = {V: 0.3, P: 0.2, C: 0.2}
        m = match_detections(preds, gts, threshold=th)
        assert sorted(p[:2] for p in m.pairs) == sorted(brute_match(preds, gts, shapely_bev_iou, th))
        seen_p = [p for p, _, _ in m.pairs] + m.unmatched_predictions
        seen_g = [g for _, g, _ in m.pairs] + m.unmatched_gts
        assert sorted(seen_p) == list(range(8)) and sorted(seen_g) == list(range(6))


def tally(entries, n_gt):
    t = Tally(n_gt=n_gt)
    for s, tp, w in entries:
        t.add(s, tp, w)
    return t


class TestAP:
    def test_pr_points(self):
        t = tally([(0.9, True, 1.0), (0.8, False, 0.0), (0.7, True, 1.0)], 2)
        pts = pr_curve(t).points
        assert [(r, p) for r, p, _ in pts] == [(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3)]
        ap, aph = average_precision(t)
        assert ap == pytest.approx(253 / 303, abs=1e-12)
        assert ap == pytest.approx(brute_ap([(0.9, True, 1.0), (0.8, False, 0.0), (0.7, True, 1.0)], 2)[0], abs=1e-12)
        assert aph == ap

    def test_perfect_and_empty(self):
        assert average_precision(tally([(0.5, True, 1.0)], 1)) == (1.0, 1.0)
        assert average_precision(tally([], 3)) == (0.0, 0.0)
        with pytest.raises(EmptyGroundTruth):
            average_precision(tally([(0.5, False, 0.0)], 0))

    def test_flipped_heading(self):
        t = tally([(0.5, True, heading_weight(-math.pi, 0.0))], 1)
        assert average_precision(t) == (1.0, 0.0)
        assert heading_weight(0.0, math.pi) == 0.0
        assert heading_weight(0.3, 0.3) == 1.0
        assert heading_weight(math.pi / 2, 0.0) == pytest.approx(0.5)
        assert heading_weight(3.1, -3.1) == pytest.approx(1 - (2 * math.pi - 6.2) / math.pi)

    def test_interpolation_envelope(self):
        # single point at recall 0.5 contributes to the 51 levels r <= 0.5
        assert interpolated_ap([0.5], [1.0]) == pytest.approx(51 / 101)
        assert interpolated_ap([], []) == 0.0

    def test_tied_scores_form_one_point(self):
        t = tally([(0.5, True, 1.0), (0.5, False, 0.0)], 1)
        assert [(r, p) for r, p, _ in pr_curve(t).points] == [(1.0, 0.5)]
        assert average_precision(t)[0] == pytest.approx(0.5)


def fuzz_entries(rng, n):
    scores = np.round(rng.random(n), 2)  # coarse grid so ties appear
    tp = rng.random(n) < 0.6
    w = np.where(tp, rng.random(n), 0.0)
    return [(float(s), bool(t), float(x)) for s, t, x in zip(scores, tp, w)]


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_ap_matches_rational_oracle(seed):
    rng = np.random.default_rng(seed)
    entries = fuzz_entries(rng, int(rng.integers(0, 40)))
    n_gt = max(1, sum(e[1] for e in entries) + int(rng.integers(0, 5)))
    ap, aph = average_precision(tally(entries, n_gt))
    bap, baph = brute_ap(entries, n_gt)
    assert abs(ap - bap) <= 1e-9 and abs(aph - baph) <= 1e-9
    assert aph <= ap + 1e-15


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_ap_invariant_under_monotone_rescale(seed):
    rng = np.random.default_rng(seed)
    entries = fuzz_entries(rng, 30)
    n_gt = sum(e[1] for e in entries) + 2
    squashed = [(s ** 3 * 0.5, t, w) for s, t, w in entries]
    assert average_precision(tally(entries, n_gt)) == average_precision(tally(squashed, n_gt))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_low_false_positive_never_helps(seed):
    rng = np.random.default_rng(seed)
    entries = [(0.1 + 0.9 * s, t, w) for s, t, w in fuzz_entries(rng, 20)]
    n_gt = sum(e[1] for e in entries) + 1
    ap, aph = average_precision(tally(entries, n_gt))
    ap2, aph2 = average_precision(tally(entries + [(0.05, False, 0.0)], n_gt))
    assert ap2 <= ap and aph2 <= aph


class TestEvaluate:
    def test_perfect_detector(self):
        gts = {"f0": [box(), box(x=10, cls=P, l=1, w=1)]}
        preds = {"f0": [b.replace(score=0.9) for b in gts["f0"]]}
        rep = evaluate(preds, gts)
        assert rep.per_class[V] == (1.0, 1.0) and rep.per_class[P] == (1.0, 1.0)
        assert math.isnan(rep.per_class[C][0])
        assert rep.mean == (1.0, 1.0)
        assert rep.rows()[-1] == ("All", "1.0000", "1.0000")

    def test_class_mean(self):
        rep = EvalReport({V: (1.0, 1.0), P: (0.5, 0.25), C: (0.0, 0.0)})
        assert rep.mean == (0.5, pytest.approx(1.25 / 3))
        assert all(math.isnan(v) for v in evaluate({}, {}).mean)

    def test_flipped_pedestrian_headings(self):
        gts = {"a": [box(cls=P, l=1, w=1, heading=0.2), box(x=5, cls=V)]}
        preds = {"a": [box(cls=P, l=1, w=1, heading=0.2 - math.pi, score=0.8), box(x=5, cls=V, score=0.9)]}
        rep = evaluate(preds, gts)
        assert rep.per_class[P] == (1.0, 0.0)
        assert rep.per_class[V] == (1.0, 1.0)

    def test_difficulty_buckets(self):
        gts = {"a": [box(num_points=100), box(x=10, num_points=3)]}
        preds = {"a": [box(score=0.9), box(x=10, score=0.8)]}
        assert evaluate(preds, gts, EvalConfig(difficulty="L2")).per_class[V][0] == 1.0
        # L1 ignores the sparse box and the detection matched to it
        assert evaluate(preds, gts, EvalConfig(difficulty="L1")).per_class[V][0] == 1.0
        only_sparse = {"a": [box(x=10, score=0.8)]}
        assert evaluate(only_sparse, gts, EvalConfig(difficulty="L1")).per_class[V][0] == 0.0
        dense_missed = {"a": [box(x=10, score=0.8)]}
        rep = evaluate(dense_missed, gts, EvalConfig(difficulty="L2", cumulative=False))
        assert rep.per_class[V][0] == 1.0

    def test_missing_score_rejected(self):
        with pytest.raises(InvariantViolation):
            evaluate({"a": [box()]}, {"a": [box()]})

    def test_csv_matches_table(self):
        gts = {"a": [box(), box(x=10)]}
        preds = {"a": [box(score=0.9), box(x=30, score=0.95)]}
        rep = evaluate(preds, gts)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "class,ap,aph"
        rows = [tuple(l.split(",")) for l in lines[1:]]
        assert rows == rep.rows()
        for name, ap, aph in rep.rows():
            assert ap in rep.table()

    def test_thresholds_override(self):
        cfg = EvalConfig(thresholds={"Vehicle": 0.3})
        assert cfg.thresholds[V] == 0.3 and cfg.thresholds[P] == DEFAULT_THRESHOLDS[P]
        with pytest.raises(InvariantViolation):
            EvalConfig(thresholds={V: 1.5})
        with pytest.raises(InvariantViolation):
            EvalConfig(iou="2d")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_evaluate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    frames, preds, gts = [], {}, {}
    for f in range(3):
        g = [random_box(rng, extent=8) for _ in range(int(rng.integers(0, 6)))]
        p = []
        for b in g:
            if rng.random() < 0.7:
                jitter = rng.normal(0, 0.15, 3)
                h = b.heading + (math.pi if rng.random() < 0.2 else rng.normal(0, 0.3))
                p.append(Box3D(tuple(np.add(b.center, jitter)), b.length, b.width, b.height,
                               wrap_heading(h),
                               b.cls, float(rng.random())))
        p += [random_box(rng, extent=8, score=True) for _ in range(int(rng.integers(0, 3)))]
        frames.append((p, g))
        preds[f"{f}"], gts[f"{f}"] = p, g
    th = {V: 0.7, P: 0.5, C: 0.5}
    rep = evaluate(preds, gts, EvalConfig(difficulty="L1"))
    oracle = brute_evaluate(frames, th)
    for c in BoxClass:
        if c in oracle:
            assert abs(rep.per_class[c][0] - oracle[c][0]) <= 1e-9
            assert abs(rep.per_class[c][1] - oracle[c][1]) <= 1e-9
            assert rep.per_class[c][1] <= rep.per_class[c][0]
        else:
            assert math.isnan(rep.per_class[c][0])
