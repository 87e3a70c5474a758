"""Bilinear upsampling, mask prediction, and the indexed-image export."""

import numpy as np
import pytest

from mpae import autodiff as ad
from mpae import masking, matching, model
from mpae.config import RunConfig, config_hash
from mpae.errors import ValidationError
from mpae.inference import (PartMasks, interpolate_features, labels_from_soft,
                            load_part_masks, predict_masks, save_part_masks)
from mpae.rng import SeedStream


def small_cfg(**overrides):
    base = dict(K=2, C=16, patch_size=2, input_size=(8, 8), batch_size=4,
                group_size=2, mask_ratio=0.5)
    base.update(overrides)
    return RunConfig(**base)


class TestInterpolateFeatures:
    def test_same_dims_identity(self):
        f = SeedStream(0, "data").normal((3, 4, 5))
        np.testing.assert_array_equal(interpolate_features(f, (3, 4)), f)

    def test_constant_stays_constant(self):
        f = np.full((2, 3, 4), 0.75)
        out = interpolate_features(f, (9, 7))
        np.testing.assert_allclose(out, 0.75, atol=1e-12)

    def test_2x2_to_3x3_center(self):
        f = np.array([[0.0, 1.0], [1.0, 2.0]]).reshape(2, 2, 1)
        out = interpolate_features(f, (3, 3))
        assert abs(out[1, 1, 0] - 1.0) < 1e-12
        # corners stay exact
        np.testing.assert_allclose(out[::2, ::2, 0], f[:, :, 0], atol=1e-12)

    def test_exact_at_source_grid_points(self):
        f = SeedStream(1, "data").normal((3, 5, 2))
        out = interpolate_features(f, (5, 9))
        np.testing.assert_allclose(out[::2, ::2], f, atol=1e-12)

    def test_values_within_input_range(self):
        f = SeedStream(2, "data").uniform((4, 4, 3))
        out = interpolate_features(f, (19, 13))
        assert out.min() >= f.min() - 1e-12
        assert out.max() <= f.max() + 1e-12

    def test_downscale_rejected(self):
        with pytest.raises(ValidationError):
            interpolate_features(np.zeros((4, 4, 1)), (3, 4))


class TestPartMasksType:
    def test_row_sum_invariant_enforced(self):
        soft = np.full((2, 2, 3), 0.4)
        with pytest.raises(ValidationError):
            PartMasks(labels=np.zeros((2, 2), dtype=np.uint8), soft=soft)

    def test_shape_mismatch_rejected(self):
        soft = np.full((2, 2, 2), 0.5)
        with pytest.raises(ValidationError):
            PartMasks(labels=np.zeros((3, 2), dtype=np.uint8), soft=soft)


class TestLabelsFromSoft:
    def test_background_channel_maps_to_zero(self):
        soft = np.zeros((1, 2, 3))
        soft[0, 0, 2] = 1.0  # background wins
        soft[0, 1, 1] = 1.0  # part 2 wins
        np.testing.assert_array_equal(labels_from_soft(soft), [[0, 2]])

    def test_tie_goes_to_lowest_index(self):
        soft = np.full((1, 1, 4), 0.25)
        for _ in range(5):
            np.testing.assert_array_equal(labels_from_soft(soft), [[1]])


class TestPredictMasks:
    def test_deterministic_and_in_range(self):
        cfg = small_cfg()
        params = model.init_params(cfg)
        image = SeedStream(3, "data").uniform((8, 8, 3))
        first = predict_masks(image, params, cfg)
        second = predict_masks(image, params, cfg)
        np.testing.assert_array_equal(first.labels, second.labels)
        assert first.labels.shape == (8, 8)
        assert first.soft.shape == (8, 8, cfg.K + 1)
        assert first.labels.max() <= cfg.K

    def test_source_resolution_equals_training_argmax(self):
        cfg = small_cfg()
        params = model.init_params(cfg)
        image = SeedStream(4, "data").uniform((8, 8, 3))
        masks = predict_masks(image, params, cfg, target=cfg.grid_size)

        from mpae import filters
        raw = filters.extract_raw_features(image, cfg.patch_size)
        descriptors = model.extract_descriptors(
            params,
            ad.Tensor(raw.reshape(1, -1, filters.C_RAW)),
            cfg.grid_size)
        dense = model.project_features(raw, params["proj_w"], params["proj_b"])
        p_train = matching.similarity_map(
            ad.Tensor(descriptors.data[0]), dense).data
        np.testing.assert_array_equal(masks.labels, labels_from_soft(p_train))

    def test_batch_matches_singles(self):
        cfg = small_cfg()
        params = model.init_params(cfg)
        images = SeedStream(5, "data").uniform((3, 8, 8, 3))
        batch = predict_masks(images, params, cfg)
        for b in range(3):
            single = predict_masks(images[b], params, cfg)
            np.testing.assert_array_equal(batch[b].labels, single.labels)

    def test_wrong_size_rejected(self):
        cfg = small_cfg()
        params = model.init_params(cfg)
        with pytest.raises(ValidationError):
            predict_masks(np.zeros((4, 4, 3)), params, cfg)


class TestMaskExport:
    def test_round_trip(self, tmp_path):
        cfg = small_cfg()
        params = model.init_params(cfg)
        image = SeedStream(6, "data").uniform((8, 8, 3))
        masks = predict_masks(image, params, cfg)
        path = tmp_path / "scene_000.png"
        save_part_masks(path, masks, config_hash(cfg),
                        soft_path=tmp_path / "scene_000_soft.dna")
        labels, sidecar = load_part_masks(path)
        np.testing.assert_array_equal(labels, masks.labels)
        assert sidecar["n_parts"] == cfg.K
        assert sidecar["config_hash"] == config_hash(cfg)
        assert sidecar["legend"]["0"] == "background"
        np.testing.assert_allclose(sidecar["soft"], masks.soft, atol=1e-7)

    def test_missing_sidecar_tolerated(self, tmp_path):
        cfg = small_cfg()
        params = model.init_params(cfg)
        image = SeedStream(7, "data").uniform((8, 8, 3))
        masks = predict_masks(image, params, cfg)
        path = tmp_path / "bare.png"
        save_part_masks(path, masks, config_hash(cfg))
        (tmp_path / "bare.json").unlink()
        labels, sidecar = load_part_masks(path)
        np.testing.assert_array_equal(labels, masks.labels)
        assert sidecar is None
