"""Train a small model end to end and watch the loss terms.

Scaled down from the benchmark setup so the whole run takes well under a
minute: 16x16 scenes, two parts, a 4x4 feature grid.  The point is the
shape of the trajectory, not the final quality.
"""

import pathlib
import sys

import numpy as np

from mpae.config import RunConfig
from mpae.datagen import SceneSpec, generate_scenes
from mpae.training import read_log, train

out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/toy_run")

scenes = generate_scenes(SceneSpec(n_parts=2, image_size=(16, 16), part_scale=0.25),
                         range(32))
images = np.stack([s.image for s in scenes])

cfg = RunConfig(K=2, C=16, patch_size=4, input_size=(16, 16), batch_size=8,
                group_size=4, mask_ratio=0.75, steps=60, ckpt_every=30,
                learning_rate=3e-3)
cfg.validate()

state = train(cfg, images, out, quiet=True)
log = read_log(out)

print(f"trained {state.step} steps; checkpoints under {out}")
print(f"{'step':>5} {'total':>8} {'restore':>8} {'fg':>7} {'bg':>7} {'sem':>7} {'tv':>7} {'ent':>7}")
for rec in log[::10] + [log[-1]]:
    ls = rec["losses"]
    print(f"{rec['step']:>5} {ls['total']:8.4f} {ls['restoration']:8.4f} "
          f"{ls['foreground']:7.4f} {ls['background']:7.4f} "
          f"{ls['semantic']:7.4f} {ls['tv']:7.4f} {ls['entropy']:7.4f}")

first, last = log[0]["losses"]["total"], log[-1]["losses"]["total"]
print(f"total loss {first:.4f} -> {last:.4f}")
