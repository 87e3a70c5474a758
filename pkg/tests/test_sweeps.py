"""Mask-ratio sweep: report shape, sorting, and the r=1.0 refusal."""

import json

import numpy as np
import pytest

from mpae.config import RunConfig
from mpae.datagen import SceneSpec, generate_scenes
from mpae.errors import ValidationError
from mpae.sweeps import format_sweep_table, sweep_mask_ratio


def sweep_cfg():
    return RunConfig(K=2, C=8, patch_size=4, input_size=(16, 16), batch_size=4,
                     group_size=2, steps=2, ckpt_every=2, mask_ratio=0.9)


def sweep_scenes(n=8):
    spec = SceneSpec(n_parts=2, image_size=(16, 16), part_scale=0.25)
    return generate_scenes(spec, range(n))


class TestSweep:
    def test_rows_sorted_and_finite(self, tmp_path):
        report = sweep_mask_ratio(sweep_cfg(), sweep_scenes(), [0.5, 0.25],
                                  tmp_path)
        ratios = [row["ratio"] for row in report["rows"]]
        assert ratios == [0.25, 0.5]
        for row in report["rows"]:
            assert np.isfinite(row["nmi"])
            assert np.isfinite(row["ari"])
        on_disk = json.loads((tmp_path / "sweep_report.json").read_text())
        assert on_disk["rows"] == report["rows"]

    def test_ratio_one_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            sweep_mask_ratio(sweep_cfg(), sweep_scenes(), [0.5, 1.0], tmp_path)

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            sweep_mask_ratio(sweep_cfg(), [], [0.5], tmp_path)

    def test_table_contains_each_ratio(self, tmp_path):
        report = sweep_mask_ratio(sweep_cfg(), sweep_scenes(), [0.5], tmp_path)
        table = format_sweep_table(report)
        assert "0.50" in table
        assert "nmi" in table
