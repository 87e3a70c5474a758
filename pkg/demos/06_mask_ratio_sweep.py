"""How much to hide: sweep the mask ratio and compare part quality.

High ratios force the restoration to lean on the part descriptors
instead of copying nearby visible patches, which is where part structure
comes from.  This demo runs a deliberately tiny sweep; expect noisy
numbers, the point is the workflow.
"""

import pathlib
import sys

from mpae.config import RunConfig
from mpae.datagen import SceneSpec, generate_scenes
from mpae.sweeps import format_sweep_table, sweep_mask_ratio

out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/sweep")

scenes = generate_scenes(SceneSpec(n_parts=2, image_size=(16, 16), part_scale=0.25),
                         range(24))

cfg = RunConfig(K=2, C=16, patch_size=4, input_size=(16, 16), batch_size=8,
                group_size=4, steps=40, ckpt_every=40, learning_rate=3e-3)

report = sweep_mask_ratio(cfg, scenes, ratios=[0.5, 0.75, 0.9], out_dir=out)
print(format_sweep_table(report))
print(f"\nper-ratio runs and sweep_report.json are under {out}")
