import os
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ[var] = "1"

import json
import logging
import pathlib
import sys
import tempfile
import time

import numpy as np

from mpae.config import RunConfig, parse_config_text
from mpae.datagen import SceneSpec, generate_scenes
from mpae import evaluate, inference, training

logging.disable(logging.WARNING)

overrides = {}
for arg in sys.argv[1:]:
    overrides.update(parse_config_text(arg))

t0 = time.time()
scenes = generate_scenes(SceneSpec(n_parts=3, image_size=(64, 64), part_scale=0.22), range(256))
images = np.stack([s.image for s in scenes])
gt = [s.labels for s in scenes]

import dataclasses
cfg = RunConfig(K=4, C=32, patch_size=8, input_size=(64, 64), batch_size=16,
                group_size=8, mask_ratio=0.9, steps=1000, ckpt_every=100000)
cfg = dataclasses.replace(cfg, **overrides)
cfg.validate()
print("overrides:", overrides, flush=True)

with tempfile.TemporaryDirectory() as d:
    t0 = time.time()
    state = training.train(cfg, images, pathlib.Path(d), quiet=True)
    train_time = time.time() - t0
    log = training.read_log(pathlib.Path(d))
print(f"train {cfg.steps} steps: {train_time:.1f}s", flush=True)
print(f"{'step':>5} {'total':>8} {'rest':>7} {'fg':>7} {'bg':>7} {'sem':>7} {'tv':>7} {'ent':>8}")
stride = max(1, cfg.steps // 10)
for rec in log[::stride] + [log[-1]]:
    ls = rec["losses"]
    print(f"{rec['step']:>5} {ls['total']:8.4f} {ls['restoration']:7.4f} "
          f"{ls['foreground']:7.4f} {ls['background']:7.4f} "
          f"{ls['semantic']:7.4f} {ls['tv']:7.4f} {ls['entropy']:8.4f}")

masks = inference.predict_masks(images, state.params, cfg, target=cfg.input_size)
pred = [m.labels for m in masks]
report = evaluate.evaluate_masks(pred, gt, baseline_permutations=100)
ratio = report["nmi"] / max(report["random_baseline_nmi"], 1e-12)
print(f"fg IoU = {report['foreground_iou']:.3f} (need > 0.5)")
print(f"NMI = {report['nmi']:.4f}, baseline = {report['random_baseline_nmi']:.5f}, "
      f"ratio = {ratio:.1f} (need > 3)")
print(f"ARI = {report['ari']:.4f}")
print(f"distinct fg labels/img = {evaluate.distinct_foreground_labels(pred):.2f}")
print(f"fg fraction = {evaluate.foreground_fraction(pred):.3f} "
      f"(gt {np.mean([(g > 0).mean() for g in gt]):.3f})")
