"""Bit-exact training state: same seed twice, and stop/resume.

Two fresh runs of the same config produce byte-identical checkpoints,
and a run resumed from its midpoint checkpoint replays the exact loss
stream of the uninterrupted run.  Checkpoints are directories of .dna
tensors plus a manifest; the fingerprint hashes every byte.
"""

import pathlib
import shutil
import sys

import numpy as np

from mpae.checkpoint import checkpoint_fingerprint, load_checkpoint
from mpae.config import RunConfig
from mpae.datagen import SceneSpec, generate_scenes
from mpae.training import read_log, train

base = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/determinism")
shutil.rmtree(base, ignore_errors=True)

scenes = generate_scenes(SceneSpec(n_parts=2, image_size=(16, 16), part_scale=0.25),
                         range(16))
images = np.stack([s.image for s in scenes])
cfg = RunConfig(K=2, C=8, patch_size=4, input_size=(16, 16), batch_size=4,
                group_size=2, steps=8, ckpt_every=4)

train(cfg, images, base / "run_a", quiet=True)
train(cfg, images, base / "run_b", quiet=True)
fp_a = checkpoint_fingerprint(base / "run_a" / "ckpt_000008")
fp_b = checkpoint_fingerprint(base / "run_b" / "ckpt_000008")
print(f"run A final fingerprint {fp_a[:16]}...")
print(f"run B final fingerprint {fp_b[:16]}...")
print(f"identical: {fp_a == fp_b}")

# resume run C from run A's midpoint and replay the back half
state = load_checkpoint(base / "run_a" / "ckpt_000004", expected_config=cfg)
train(cfg, images, base / "run_c", state=state, quiet=True)
tail_a = [r["losses"]["total"] for r in read_log(base / "run_a")[4:]]
tail_c = [r["losses"]["total"] for r in read_log(base / "run_c")]
print(f"uninterrupted steps 5-8: {[f'{v:.10f}' for v in tail_a]}")
print(f"resumed steps 5-8:       {[f'{v:.10f}' for v in tail_c]}")
print(f"equal: {tail_a == tail_c}")
