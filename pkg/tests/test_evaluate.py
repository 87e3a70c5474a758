"""Dataset-level scoring: pixel universes, IoU, shuffle baseline, reports."""

import numpy as np
import pytest

from mpae.datagen import UNKNOWN_LABEL
from mpae.errors import ValidationError
from mpae.evaluate import (distinct_foreground_labels, evaluate_masks,
                           foreground_fraction, foreground_iou,
                           permutation_baseline, pooled_labels)
from mpae.rng import SeedStream


class TestForegroundIou:
    def test_perfect_overlap(self):
        m = np.array([[0, 1], [2, 0]])
        assert foreground_iou(m, m) == 1.0

    def test_labels_do_not_matter_only_foreground(self):
        pred = np.array([[0, 1], [1, 0]])
        gt = np.array([[0, 2], [3, 0]])
        assert foreground_iou(pred, gt) == 1.0

    def test_half_overlap(self):
        pred = np.array([[1, 1], [0, 0]])
        gt = np.array([[1, 0], [0, 1]])  # intersection 1, union 3
        assert abs(foreground_iou(pred, gt) - 1.0 / 3.0) < 1e-12

    def test_both_empty(self):
        z = np.zeros((2, 2), dtype=int)
        assert foreground_iou(z, z) == 1.0


class TestPooledLabels:
    def test_background_excluded_by_default(self):
        pred = [np.array([[1, 2], [0, 1]])]
        gt = [np.array([[1, 1], [0, 2]])]
        p, g = pooled_labels(pred, gt)
        np.testing.assert_array_equal(p, [1, 2, 1])
        np.testing.assert_array_equal(g, [1, 1, 2])

    def test_include_background_flag(self):
        pred = [np.array([[1, 2], [0, 1]])]
        gt = [np.array([[1, 1], [0, 2]])]
        p, g = pooled_labels(pred, gt, include_background_pixels=True)
        assert p.size == 4

    def test_unknown_always_excluded(self):
        pred = [np.array([[1, 2]])]
        gt = [np.array([[UNKNOWN_LABEL, 1]])]
        p, g = pooled_labels(pred, gt, include_background_pixels=True)
        np.testing.assert_array_equal(p, [2])

    def test_pure_background_prediction_change_is_invisible(self):
        # adding correctly-predicted background pixels must not move scores
        pred = [np.array([[1, 2], [0, 0]])]
        gt = [np.array([[1, 2], [0, 0]])]
        grown_pred = [np.array([[1, 2, 0], [0, 0, 0]])]
        grown_gt = [np.array([[1, 2, 0], [0, 0, 0]])]
        a = pooled_labels(pred, gt)
        b = pooled_labels(grown_pred, grown_gt)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_empty_universe_rejected(self):
        with pytest.raises(ValidationError):
            pooled_labels([np.zeros((2, 2), dtype=int)],
                          [np.zeros((2, 2), dtype=int)])


class TestPermutationBaseline:
    def test_deterministic(self):
        stream = SeedStream(0, "data")
        pred = np.array([stream.below(4) for _ in range(60)])
        gt = np.array([stream.below(3) for _ in range(60)])
        a = permutation_baseline(pred, gt, n_permutations=10, seed=5)
        b = permutation_baseline(pred, gt, n_permutations=10, seed=5)
        assert a == b

    def test_structured_prediction_beats_baseline(self):
        gt = np.repeat([1, 2, 3], 40)
        pred = gt.copy()  # perfectly aligned
        baseline = permutation_baseline(pred, gt, n_permutations=20)
        assert baseline < 0.2
        assert 1.0 > 3 * baseline


class TestEvaluateMasks:
    def test_report_fields_and_perfect_scores(self):
        gt = [np.array([[0, 1, 1], [0, 2, 2]]) for _ in range(4)]
        report = evaluate_masks(gt, gt, names=[f"s{i}" for i in range(4)],
                                baseline_permutations=5,
                                config_hash_value="abc123")
        assert report["nmi"] == 1.0
        assert report["ari"] == 1.0
        assert report["foreground_iou"] == 1.0
        assert report["config_hash"] == "abc123"
        assert len(report["per_image"]) == 4
        assert report["per_image"][0]["name"] == "s0"
        assert report["nme"] is None
        assert 0.0 <= report["random_baseline_nmi"] <= 1.0

    def test_keypoints_enable_nme(self):
        labels = np.zeros((8, 8), dtype=int)
        labels[1:3, 1:3] = 1
        labels[5:7, 5:7] = 2
        kp = np.array([[1.5, 1.5, 1.0], [5.5, 5.5, 1.0]])
        maps = [labels] * 6
        report = evaluate_masks(maps, maps, keypoints=[kp] * 6, n_parts=2,
                                baseline_permutations=0)
        assert report["nme"] is not None
        assert report["nme"] < 1e-9

    def test_unknown_gt_rows_score_none(self):
        pred = [np.array([[1, 2]])]
        gt = [np.array([[1, UNKNOWN_LABEL]])]
        report = evaluate_masks(pred, gt, baseline_permutations=0)
        assert report["per_image"][0]["nmi"] == 1.0


class TestAblationSummaries:
    def test_distinct_labels(self):
        maps = [np.array([[0, 1, 2]]), np.array([[3, 3, 0]])]
        assert distinct_foreground_labels(maps) == 1.5

    def test_foreground_fraction(self):
        maps = [np.zeros((2, 2), dtype=int), np.ones((2, 2), dtype=int)]
        assert foreground_fraction(maps) == 0.5
