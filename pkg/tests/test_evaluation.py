import itertools

import numpy as np
import pytest

from toothlab.evaluation import (
    DuplicateRoundError,
    EvalHistory,
    PixelConfusion,
    evaluate,
    match_instances,
    report_from_confusion,
)
from toothlab.gateway import MockBackend
from toothlab.masks import BinaryMask

from shapes import random_mask


def block(x0, y0, x1, y1, w=20, h=20):
    arr = np.zeros((h, w), bool)
    arr[y0:y1, x0:x1] = True
    return BinaryMask.from_array(arr)


class TestMatching:
    def test_identical_pair(self):
        m = block(2, 2, 8, 8)
        matching = match_instances([m], [m])
        assert matching.pairs == ((0, 0, 1.0),)
        assert matching.unmatched_predictions == ()
        assert matching.unmatched_ground_truth == ()

    def test_greedy_keeps_best_of_two(self):
        gt = block(2, 2, 10, 10)
        close = block(2, 2, 10, 9)  # higher overlap
        worse = block(2, 2, 10, 6)
        matching = match_instances([worse, close], [gt])
        assert len(matching.pairs) == 1
        assert matching.pairs[0][0] == 1
        assert matching.unmatched_predictions == (0,)

    def test_below_threshold_unmatched(self):
        a = block(0, 0, 4, 4)
        b = block(3, 3, 8, 8)
        matching = match_instances([a], [b], iou_threshold=0.5)
        assert matching.pairs == ()
        assert matching.unmatched_predictions == (0,)
        assert matching.unmatched_ground_truth == (0,)

    def test_empty_sides(self):
        m = block(0, 0, 4, 4)
        matching = match_instances([], [m])
        assert matching.unmatched_ground_truth == (0,)
        matching = match_instances([m], [])
        assert matching.unmatched_predictions == (0,)

    def test_matches_exhaustive_greedy_oracle(self):
        from toothlab.masks import iou as mask_iou

        rng = np.random.default_rng(29)
        for _ in range(15):
            preds = [random_mask(rng, 12, 12, 0.35) for _ in range(int(rng.integers(1, 5)))]
            gts = [random_mask(rng, 12, 12, 0.35) for _ in range(int(rng.integers(1, 5)))]
            got = match_instances(preds, gts, iou_threshold=0.2)

            # oracle: scan every pair ordered by descending iou with the
            # deterministic tie-break, taking a pair when both sides are free
            scored = []
            for i, j in itertools.product(range(len(preds)), range(len(gts))):
                value = mask_iou(preds[i], gts[j])
                if value >= 0.2:
                    scored.append((value, i, j))
            scored.sort(key=lambda t: (-t[0], t[1], t[2]))
            taken, used_i, used_j = [], set(), set()
            for value, i, j in scored:
                if i not in used_i and j not in used_j:
                    taken.append((i, j, value))
                    used_i.add(i)
                    used_j.add(j)
            assert list(got.pairs) == taken


class TestEvaluate:
    def test_perfect_prediction_all_hundred(self):
        rng = np.random.default_rng(1)
        masks = [random_mask(rng, 16, 16, 0.4) for _ in range(4)]
        masks = [m for m in masks if not m.empty]
        matching = match_instances(masks, masks)
        report = evaluate(matching, masks, masks)
        assert report.iou == report.precision == report.recall == report.f1 == 100.0

    def test_hand_counted_confusion(self):
        # TP=2, FP=1, FN=1 pixels
        pred = block(0, 0, 3, 1, w=6, h=1)  # pixels 0,1,2
        gt = block(1, 0, 4, 1, w=6, h=1)  # pixels 1,2,3
        matching = match_instances([pred], [gt])
        report = evaluate(matching, [pred], [gt])
        assert report.confusion == PixelConfusion(2, 1, 1)
        assert report.iou == pytest.approx(50.0)
        assert report.precision == pytest.approx(200 / 3)
        assert report.recall == pytest.approx(200 / 3)
        assert report.f1 == pytest.approx(200 / 3)

    def test_published_row_internal_consistency(self):
        # F1 must follow from its own P and R to within 0.05 points
        p, r = 75.7, 83.5
        f1 = 2 * p * r / (p + r)
        assert f1 == pytest.approx(79.4, abs=0.05)

    def test_unmatched_pixels_become_fp_and_fn(self):
        pred = block(0, 0, 2, 2)  # 4 pixels, no gt counterpart
        gt = block(10, 10, 13, 13)  # 9 pixels, no pred counterpart
        matching = match_instances([pred], [gt])
        report = evaluate(matching, [pred], [gt])
        assert report.confusion == PixelConfusion(0, 4, 9)
        assert report.iou == 0.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(8)
        preds = [random_mask(rng, 14, 14, 0.3) for _ in range(5)]
        gts = [random_mask(rng, 14, 14, 0.3) for _ in range(5)]
        r1 = evaluate(match_instances(preds, gts), preds, gts)
        order = [3, 1, 4, 0, 2]
        preds2 = [preds[i] for i in order]
        gts2 = [gts[i] for i in order]
        r2 = evaluate(match_instances(preds2, gts2), preds2, gts2)
        assert r1.confusion == r2.confusion
        assert r1.iou == r2.iou

    def test_pixel_identities_hold(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            preds = [random_mask(rng, 14, 14, 0.3) for _ in range(3)]
            gts = [random_mask(rng, 14, 14, 0.3) for _ in range(3)]
            report = evaluate(match_instances(preds, gts), preds, gts)
            c = report.confusion
            if c.tp + c.fp + c.fn == 0:
                continue
            iou = c.tp / (c.tp + c.fp + c.fn)
            assert iou <= min(report.precision, report.recall) / 100 + 1e-12
            if report.precision + report.recall > 0:
                f1 = (
                    2
                    * report.precision
                    * report.recall
                    / (report.precision + report.recall)
                )
                assert abs(f1 - report.f1) < 0.05

    def test_zero_division_flagged(self):
        report = report_from_confusion(PixelConfusion(0, 0, 0))
        assert report.iou == 0.0
        assert "iou" in report.zero_division_flags
        assert "f1" in report.zero_division_flags

    def test_per_class_breakdown(self):
        pred = block(0, 0, 3, 1, w=6, h=1)
        gt = block(1, 0, 4, 1, w=6, h=1)
        matching = match_instances([pred], [gt])
        report = evaluate(
            matching, [pred], [gt], pred_labels=["incisor"], gt_labels=["incisor"]
        )
        assert set(report.per_class) == {"incisor"}
        assert report.per_class["incisor"]["iou"] == pytest.approx(50.0)


class TestHistory:
    def _report(self, iou_frac):
        total = 1000
        tp = round(iou_frac * total)
        rest = total - tp
        return report_from_confusion(PixelConfusion(tp, rest // 2, rest - rest // 2))

    def test_rounds_recorded_in_order(self):
        history = EvalHistory()
        for r in range(4):
            history.record_round(self._report(0.5 + 0.1 * r), r)
        assert len(history) == 4
        assert [r.round_number for r in history.series()] == [0, 1, 2, 3]

    def test_duplicate_round_rejected(self):
        history = EvalHistory()
        history.record_round(self._report(0.5), 2)
        with pytest.raises(DuplicateRoundError):
            history.record_round(self._report(0.6), 2)
        assert len(history) == 1

    def test_mock_three_round_series(self):
        backend = MockBackend(seed=42)
        history = EvalHistory()
        history.record_round(backend.baseline_report(), 0)
        for r in (1, 2, 3):
            job = backend.submit_training({"annotations": [{}] * 100})
            _, metrics = backend.training_status(job)
            history.record_round(metrics, r)
        series = [r.iou for r in history.series()]
        assert series[0] == pytest.approx(75.0, abs=0.5)
        assert all(a < b for a, b in zip(series, series[1:]))

    def test_csv_layout(self):
        history = EvalHistory()
        history.record_round(self._report(0.8), 1)
        lines = history.to_csv().strip().splitlines()
        assert lines[0] == "round,iou,precision,recall,f1"
        assert lines[1].startswith("1,")
