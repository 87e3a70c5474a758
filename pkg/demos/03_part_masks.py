"""From trained weights to pixel-level part masks.

Runs the toy training from demo 02 if its output directory is missing,
then predicts masks for a few held-out scenes and saves them as indexed
PNGs with JSON sidecars.
"""

import pathlib
import runpy
import sys

import numpy as np

from mpae.checkpoint import load_checkpoint
from mpae.datagen import SceneSpec, generate_scenes
from mpae.inference import predict_masks, save_part_masks

run_dir = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/toy_run")
out = run_dir.parent / "masks"

if not run_dir.is_dir():
    sys.argv = [sys.argv[0], str(run_dir)]
    runpy.run_path(pathlib.Path(__file__).with_name("02_train_toy.py"), run_name="__main__")

ckpt = sorted(p for p in run_dir.iterdir() if p.name.startswith("ckpt_"))[-1]
state = load_checkpoint(ckpt)
cfg = state.config
print(f"loaded {ckpt.name} (step {state.step})")

# scenes the training loop never saw
held_out = generate_scenes(SceneSpec(n_parts=2, image_size=(16, 16), part_scale=0.25),
                           range(100, 104))
images = np.stack([s.image for s in held_out])

masks = predict_masks(images, state.params, cfg, target=cfg.input_size)

out.mkdir(parents=True, exist_ok=True)
from mpae.config import config_hash
for scene, mask in zip(held_out, masks):
    counts = {int(k): int((mask.labels == k).sum()) for k in np.unique(mask.labels)}
    print(f"  {scene.name}: label -> pixels {counts}")
    save_part_masks(out / f"{scene.name}.png", mask, config_hash(cfg))
print(f"saved indexed PNGs + sidecars under {out}")
print("label 0 is background; labels 1..K are discovered parts (unordered)")
