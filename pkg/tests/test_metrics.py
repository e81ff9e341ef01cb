import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmd.errors import ShapeError
from wmd.metrics import (
    OnlineCounts,
    confusion,
    offline_metrics,
    online_update,
    overlap,
    replay_stream,
)

from helpers import brute_offline, brute_online_prefix

streams = st.integers(1, 120).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 3), min_size=n, max_size=n),
        st.lists(st.integers(0, 3), min_size=n, max_size=n),
    )
)


class TestConfusion:
    def test_diagonal(self):
        counts = confusion([0, 1, 2, 3], [0, 1, 2, 3])
        assert counts.tp == (1, 1, 1, 1)
        assert counts.fp == (0, 0, 0, 0)
        assert counts.fn == (0, 0, 0, 0)
        assert counts.tn == (3, 3, 3, 3)

    def test_hand_count(self):
        counts = confusion([0, 0], [0, 1])
        assert counts.tp[0] == 1 and counts.fp[0] == 1
        assert counts.fn[1] == 1 and counts.tn[1] == 1

    def test_empty(self):
        counts = confusion([], [])
        assert counts.tp == (0, 0, 0, 0) and counts.total == 0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([0, 1], [0])

    def test_invalid_class(self):
        with pytest.raises(ShapeError):
            confusion([0, 4], [0, 1])

    def test_per_class_totals_invariant(self):
        rng = np.random.default_rng(0)
        preds, gts = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        counts = confusion(preds, gts)
        for c in range(4):
            assert counts.tp[c] + counts.tn[c] + counts.fp[c] + counts.fn[c] == 50


class TestOfflineMetrics:
    def test_perfect(self):
        report = offline_metrics(confusion([0, 1, 2, 3] * 5, [0, 1, 2, 3] * 5))
        assert report.accuracy == report.frame_accuracy == 1.0
        assert report.precision == report.recall == report.f1 == 1.0

    def test_constant_predictor_hand_values(self):
        # brute-force confusion oracle: preds all 0 against one of each class
        report = offline_metrics(confusion([0, 0, 0, 0], [0, 1, 2, 3]))
        assert report.precision == pytest.approx(0.0625)
        assert report.recall == pytest.approx(0.25)
        assert report.frame_accuracy == pytest.approx(0.25)
        assert report.accuracy == pytest.approx(0.625)

    @given(stream=streams)
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, stream):
        preds, gts = stream
        report = offline_metrics(confusion(preds, gts))
        expected = brute_offline(preds, gts)
        for key, value in expected.items():
            assert getattr(report, {"acc": "accuracy", "frame_acc": "frame_accuracy"}.get(key, key)) == pytest.approx(
                value, abs=1e-12
            )

    def test_zero_denominator_contributes_zero(self):
        # class 3 never predicted and never true
        report = offline_metrics(confusion([0, 1], [0, 2]))
        assert report.per_class[3]["precision"] == 0.0
        assert report.per_class[3]["recall"] == 0.0


class TestOverlap:
    def test_identical_nonempty(self):
        a = np.zeros((8, 8), dtype=bool)
        a[2:5, 2:5] = True
        assert overlap(a, a) == (1.0, 1.0)

    def test_disjoint(self):
        a = np.zeros((8, 8), dtype=bool)
        b = np.zeros((8, 8), dtype=bool)
        a[0, 0] = True
        b[5, 5] = True
        assert overlap(a, b) == (0.0, 0.0)

    def test_set_arithmetic(self):
        # |a ∩ b| = 2, |a| = |b| = 4: IoU = 2/6, Dice = 4/8
        a = np.zeros(10, dtype=bool)
        b = np.zeros(10, dtype=bool)
        a[:4] = True
        b[2:6] = True
        iou, dice = overlap(a, b)
        assert iou == pytest.approx(1 / 3)
        assert dice == pytest.approx(0.5)

    def test_both_empty(self):
        assert overlap(np.zeros(5, dtype=bool), np.zeros(5, dtype=bool)) == (1.0, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            overlap(np.zeros((2, 2)), np.zeros((3, 3)))

    @given(
        a=st.lists(st.booleans(), min_size=1, max_size=60),
        b=st.lists(st.booleans(), min_size=1, max_size=60),
    )
    @settings(max_examples=60, deadline=None)
    def test_dice_iou_relation(self, a, b):
        n = min(len(a), len(b))
        iou, dice = overlap(np.array(a[:n]), np.array(b[:n]))
        assert dice == pytest.approx(2 * iou / (1 + iou), abs=1e-12)
        assert dice >= iou


class TestOnlineMetrics:
    def test_all_correct_stream(self):
        state, trace = replay_stream([1] * 10, [1] * 10)
        assert state.w == 3.0
        assert trace[-1].ia == 1.0
        assert trace[-1].wia == pytest.approx(1.0)
        assert trace[-1].ip == 1.0

    def test_correct_then_wrong(self):
        state, trace = replay_stream([0, 1], [0, 2])
        # hand count: frame 1 -> tp1 tn3; frame 2 -> fp1 fn1 tn2
        assert trace[1].ia == pytest.approx((1 + 5) / 8)
        assert trace[1].ip == pytest.approx(0.5)

    def test_forced_w_identities(self):
        rng = np.random.default_rng(1)
        preds, gts = rng.integers(0, 4, 60), rng.integers(0, 4, 60)
        _, trace = replay_stream(preds, gts, fixed_w=1.0)
        for v in trace:
            assert v.wia == pytest.approx(v.ia, abs=1e-15)
            assert v.cip == pytest.approx(v.ip, abs=1e-15)

    def test_w_clamped_before_first_frame(self):
        assert OnlineCounts().w == 1.0

    @given(stream=streams)
    @settings(max_examples=40, deadline=None)
    def test_streaming_matches_prefix_recomputation(self, stream):
        preds, gts = stream
        _, trace = replay_stream(preds, gts)
        for t, v in enumerate(trace):
            ia, ip, wia, cip = brute_online_prefix(preds, gts, t)
            assert v.ia == pytest.approx(ia, abs=1e-12)
            assert v.ip == pytest.approx(ip, abs=1e-12)
            assert v.wia == pytest.approx(wia, abs=1e-12)
            assert v.cip == pytest.approx(cip, abs=1e-12)

    @given(stream=streams)
    @settings(max_examples=40, deadline=None)
    def test_values_within_unit_interval_with_true_ratio(self, stream):
        preds, gts = stream
        _, trace = replay_stream(preds, gts)
        for v in trace:
            for value in (v.ia, v.ip, v.wia, v.cip):
                assert -1e-12 <= value <= 1 + 1e-12

    def test_rejects_bad_class(self):
        with pytest.raises(ShapeError):
            online_update(OnlineCounts(), 5, 0)
