"""Agreement scores vs the brute-force oracle, and the keypoint error protocol."""

import logging
import math

import numpy as np
import pytest

from mpae.errors import ValidationError
from mpae.metrics import (ari, contingency_oracle, contingency_table,
                          fit_affine_map, nme, nmi, normalized_keypoint_error,
                          part_centroids, predict_affine)
from mpae.rng import SeedStream


class TestContingencyTable:
    def test_counts_and_marginals(self):
        counts, pl, gl = contingency_table([0, 0, 1, 2], [5, 5, 5, 9])
        np.testing.assert_array_equal(pl, [0, 1, 2])
        np.testing.assert_array_equal(gl, [5, 9])
        np.testing.assert_array_equal(counts, [[2, 0], [1, 0], [0, 1]])
        assert counts.sum() == 4

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            contingency_table([0, 1], [0])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            nmi([], [])


class TestNmi:
    def test_identical_is_one(self):
        assert nmi([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_relabeled_identical_is_one(self):
        assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_constant_pred_is_zero(self):
        assert nmi([3, 3, 3, 3], [0, 1, 0, 1]) == 0.0

    def test_constant_both_is_one(self):
        assert nmi([2, 2, 2], [7, 7, 7]) == 1.0

    def test_single_element(self):
        assert nmi([4], [0]) == 1.0

    def test_mean_norm_flag(self):
        pred = [0, 0, 0, 1, 1, 2]
        gt = [0, 1, 0, 1, 1, 1]
        sqrt_value = nmi(pred, gt)
        mean_value = nmi(pred, gt, norm="mean")
        assert sqrt_value != mean_value
        # sqrt(ab) <= (a+b)/2, so the sqrt normalization can only score higher
        assert sqrt_value >= mean_value

    def test_unknown_norm_rejected(self):
        with pytest.raises(ValidationError):
            nmi([0, 1], [0, 1], norm="max")


class TestAri:
    def test_identical_is_one(self):
        assert ari([0, 1, 0, 2], [0, 1, 0, 2]) == 1.0

    def test_spec_example_matches_pair_counting(self):
        # all six pairs of four elements, counted by hand:
        # pred [0,1,0,1]: together {0,2}, {1,3}; gt [0,0,1,1]: together {0,1}, {2,3}
        # no pair is together in both; 2 together-pred-only, 2 together-gt-only,
        # 2 apart in both
        value = ari([0, 1, 0, 1], [0, 0, 1, 1])
        a, b, c, d = 0, 2, 2, 2
        manual = 2.0 * (a * d - b * c) / ((a + b) * (b + d) + (a + c) * (c + d))
        assert abs(value - manual) < 1e-12
        assert abs(value - (-0.5)) < 1e-12

    def test_single_element_is_one(self):
        assert ari([0], [5]) == 1.0

    def test_all_singletons_vs_identical(self):
        assert ari([0, 1, 2], [5, 6, 7]) == 1.0

    def test_can_be_negative(self):
        assert ari([0, 1, 0, 1], [0, 0, 1, 1]) < 0.0


class TestOracleAgreement:
    def test_identical(self):
        assert contingency_oracle([1, 2, 1], [1, 2, 1]) == (1.0, 1.0)

    def test_constant_identical_convention(self):
        assert contingency_oracle([3, 3], [8, 8]) == (1.0, 1.0)

    def test_size_cap_refused(self):
        with pytest.raises(ValidationError):
            contingency_oracle(np.zeros(10_001, dtype=int), np.zeros(10_001, dtype=int))

    def test_random_labelings_match_fast_path(self):
        for seed in range(60):
            stream = SeedStream(seed, "data")
            n = 2 + stream.below(99)
            pred = np.array([stream.below(1 + stream.below(6)) for _ in range(n)])
            gt = np.array([stream.below(1 + stream.below(6)) for _ in range(n)])
            nmi_ref, ari_ref = contingency_oracle(pred, gt)
            assert abs(nmi(pred, gt) - nmi_ref) < 1e-10
            assert abs(ari(pred, gt) - ari_ref) < 1e-10

    def test_permutation_invariance(self):
        stream = SeedStream(100, "data")
        pred = np.array([stream.below(4) for _ in range(50)])
        gt = np.array([stream.below(3) for _ in range(50)])
        base = (nmi(pred, gt), ari(pred, gt))
        pred_perm = np.array([3, 0, 2, 1])[pred]
        gt_perm = np.array([2, 0, 1])[gt]
        renamed = (nmi(pred_perm, gt_perm), ari(pred_perm, gt_perm))
        assert abs(base[0] - renamed[0]) < 1e-12
        assert abs(base[1] - renamed[1]) < 1e-12


class TestPartCentroids:
    def test_simple_blocks(self):
        labels = np.zeros((4, 6), dtype=int)
        labels[0:2, 0:2] = 1  # centroid (0.5, 0.5) in (x, y)
        labels[3, 5] = 2      # centroid (5, 3)
        out = part_centroids(labels, 2)
        np.testing.assert_allclose(out, [[0.5, 0.5], [5.0, 3.0]], atol=1e-12)

    def test_absent_label_imputed_with_center(self):
        labels = np.zeros((5, 9), dtype=int)
        out = part_centroids(labels, 3)
        np.testing.assert_allclose(out, np.tile([4.0, 2.0], (3, 1)), atol=1e-12)

    def test_bad_rank_rejected(self):
        with pytest.raises(ValidationError):
            part_centroids(np.zeros((2, 2, 2), dtype=int), 1)


class TestAffineFit:
    def test_recovers_exact_affine_map(self):
        stream = SeedStream(30, "data")
        x = stream.normal((8, 3))
        w = stream.normal((3, 2))
        b = stream.normal((2,))
        y = x @ w + b
        theta = fit_affine_map(x, y)
        np.testing.assert_allclose(predict_affine(theta, x), y, atol=1e-9)

    def test_rank_deficient_warns(self, caplog):
        x = np.ones((5, 3))  # constant inputs: rank 1 design
        y = np.zeros((5, 2))
        with caplog.at_level(logging.WARNING, logger="mpae.metrics"):
            fit_affine_map(x, y)
        assert any("rank-deficient" in r.message for r in caplog.records)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            fit_affine_map(np.zeros((0, 2)), np.zeros((0, 2)))


class TestNormalizedKeypointError:
    def test_center_to_corner_closed_form(self):
        # all predictions at the center of the unit square, keypoints at its
        # corners, normalization 1: each error is hypot(0.5, 0.5)
        predicted = np.tile([0.5, 0.5], (4, 1))
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
        keypoints = np.array([[x, y, 1.0] for x, y in corners])
        value = normalized_keypoint_error(predicted, keypoints, 1.0)
        oracle = sum(math.hypot(0.5 - x, 0.5 - y) for x, y in corners) / 4
        assert abs(value - oracle) < 1e-12
        assert abs(value - math.sqrt(0.5)) < 1e-12

    def test_invisible_keypoints_excluded(self):
        predicted = np.array([[0.0, 0.0], [10.0, 10.0]])
        keypoints = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
        assert normalized_keypoint_error(predicted, keypoints, 2.0) == 0.0

    def test_all_invisible_is_none(self):
        predicted = np.zeros((2, 2))
        keypoints = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
        assert normalized_keypoint_error(predicted, keypoints, 1.0) is None


def random_two_part_scene(stream, h=16, w=16):
    labels = np.zeros((h, w), dtype=int)
    r1, c1 = stream.below(h - 6), stream.below(w - 6)
    labels[r1:r1 + 3, c1:c1 + 3] = 1
    r2, c2 = stream.below(h - 6), stream.below(w - 6)
    labels[r2 + 3:r2 + 6, c2 + 3:c2 + 6] = 2
    keypoints = np.concatenate(
        [part_centroids(labels, 2), np.ones((2, 1))], axis=1)
    return labels, keypoints


class TestNme:
    def test_identity_regressor_zero_when_centroids_match(self):
        stream = SeedStream(40, "data")
        test = [random_two_part_scene(stream) for _ in range(4)]
        report = nme([], test, n_parts=2, regressor="identity")
        assert report["score"] < 1e-12

    def test_affine_protocol_recovers_consistent_mapping(self):
        stream = SeedStream(41, "data")
        scenes = [random_two_part_scene(stream) for _ in range(16)]
        # keypoints ARE the centroids, so an identity-reachable affine map
        # drives the error to zero on held-out scenes
        report = nme(scenes[:12], scenes[12:], n_parts=2)
        assert report["score"] < 1e-9
        assert len(report["per_image"]) == 4

    def test_center_prediction_corner_keypoints(self):
        # empty masks impute every centroid at the image center; with the
        # identity regressor the score is the mean center-to-corner distance
        labels = np.zeros((11, 11), dtype=int)
        corners = [(0, 0), (10, 0), (0, 10), (10, 10)]
        keypoints = np.array([[x, y, 1.0] for x, y in corners])
        report = nme([], [(labels, keypoints)], n_parts=4,
                     normalization=1.0, regressor="identity")
        assert abs(report["score"] - 5.0 * math.sqrt(2.0)) < 1e-12

    def test_scale_invariance(self):
        stream = SeedStream(42, "data")
        scenes = [random_two_part_scene(stream) for _ in range(16)]
        base = nme(scenes[:12], scenes[12:], n_parts=2)
        scaled = [(np.repeat(np.repeat(m, 2, axis=0), 2, axis=1),
                   np.concatenate([kp[:, :2] * 2, kp[:, 2:]], axis=1))
                  for m, kp in scenes]
        doubled = nme(scaled[:12], scaled[12:], n_parts=2)
        assert abs(base["score"] - doubled["score"]) < 1e-9

    def test_empty_test_split_rejected(self):
        with pytest.raises(ValidationError):
            nme([random_two_part_scene(SeedStream(43, "data"))], [], n_parts=2)

    def test_inconsistent_keypoint_counts_rejected(self):
        stream = SeedStream(44, "data")
        good = random_two_part_scene(stream)
        bad = (good[0], good[1][:1])
        with pytest.raises(ValidationError):
            nme([good], [bad], n_parts=2)

    def test_identity_needs_matching_counts(self):
        labels = np.zeros((8, 8), dtype=int)
        keypoints = np.array([[1.0, 1.0, 1.0]])
        with pytest.raises(ValidationError):
            nme([], [(labels, keypoints)], n_parts=3, regressor="identity")
