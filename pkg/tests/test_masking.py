"""Patch grid round-trips and deterministic mask generation."""

import math

import numpy as np
import pytest

from mpae import autodiff as ad
from mpae.errors import ValidationError
from mpae.masking import generate_mask, mask_count, patchify, select_unmasked, unpatchify
from mpae.rng import SeedStream


class TestPatchify:
    def test_4x4_p2_grid_shape(self):
        image = np.arange(48, dtype=np.float64).reshape(4, 4, 3)
        grid = patchify(image, 2)
        assert grid.shape == (2, 2, 12)

    def test_patch_content_layout(self):
        image = np.arange(48, dtype=np.float64).reshape(4, 4, 3)
        grid = patchify(image, 2)
        np.testing.assert_array_equal(grid[0, 1], image[0:2, 2:4, :].reshape(-1))
        np.testing.assert_array_equal(grid[1, 0], image[2:4, 0:2, :].reshape(-1))

    def test_whole_image_patch(self):
        image = np.random.default_rng(0).uniform(size=(8, 8, 3))
        grid = patchify(image, 8)
        assert grid.shape == (1, 1, 192)
        np.testing.assert_array_equal(grid[0, 0], image.reshape(-1))

    def test_round_trip_identity(self):
        image = np.random.default_rng(1).uniform(size=(16, 24, 3))
        np.testing.assert_array_equal(unpatchify(patchify(image, 4), 4), image)

    def test_round_trip_batched_tensor_with_gradient(self):
        rng = np.random.default_rng(2)
        grid = ad.Tensor(rng.uniform(size=(2, 3, 3, 12)), requires_grad=True)
        image = unpatchify(grid, 2)
        assert image.data.shape == (2, 6, 6, 3)
        ad.tsum(image * image).backward()
        np.testing.assert_allclose(grid.grad, 2.0 * grid.data)

    def test_non_divisible_dims_rejected(self):
        with pytest.raises(ValidationError):
            patchify(np.zeros((5, 4, 3)), 2)

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ValidationError):
            patchify(np.zeros((4, 4, 1)), 2)


class TestGenerateMask:
    def test_exact_count_half(self):
        mask = generate_mask((4, 4), 0.5, seed=0, sample_index=0)
        assert mask.sum() == 8

    def test_extremes(self):
        assert generate_mask((4, 4), 0.0, 0, 0).sum() == 0
        assert generate_mask((4, 4), 1.0, 0, 0).sum() == 16

    def test_floor_arithmetic_16x16(self):
        mask = generate_mask((16, 16), 0.9, 0, 0)
        assert mask.sum() == 230

    def test_count_matches_floor_property(self):
        stream = SeedStream(9, "data")
        for _ in range(100):
            gh = 1 + stream.below(32)
            gw = 1 + stream.below(32)
            r = stream.uniform()
            mask = generate_mask((gh, gw), r, 3, 5)
            assert mask.sum() == mask_count((gh, gw), r) == math.floor(r * gh * gw)

    def test_deterministic_and_index_sensitive(self):
        a = generate_mask((8, 8), 0.5, seed=1, sample_index=4)
        b = generate_mask((8, 8), 0.5, seed=1, sample_index=4)
        c = generate_mask((8, 8), 0.5, seed=1, sample_index=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_range_check(self):
        with pytest.raises(ValidationError):
            generate_mask((4, 4), 1.5, 0, 0)


class TestSelectUnmasked:
    def test_all_zeros_mask_keeps_everything_row_major(self):
        grid = np.arange(2 * 2 * 12, dtype=np.float64).reshape(2, 2, 12)
        positions, patches = select_unmasked(grid, np.zeros((2, 2), dtype=np.uint8))
        np.testing.assert_array_equal(positions, [[0, 0], [0, 1], [1, 0], [1, 1]])
        np.testing.assert_array_equal(patches, grid.reshape(4, 12))

    def test_all_ones_mask_empty(self):
        grid = np.zeros((2, 2, 12))
        positions, patches = select_unmasked(grid, np.ones((2, 2), dtype=np.uint8))
        assert positions.shape == (0, 2)
        assert patches.shape == (0, 12)

    def test_checker_mask_positions(self):
        grid = np.zeros((2, 2, 12))
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        positions, _ = select_unmasked(grid, mask)
        np.testing.assert_array_equal(positions, [[0, 1], [1, 0]])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            select_unmasked(np.zeros((2, 2, 12)), np.zeros((3, 3), dtype=np.uint8))
