import os
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ[var] = "1"

import logging
import pathlib
import sys
import tempfile

import numpy as np

from mpae.config import RunConfig, parse_config_text
from mpae.datagen import SceneSpec, generate_scenes
from mpae import filters, masking, model, training
from mpae import autodiff as ad

logging.disable(logging.WARNING)

overrides = {}
for arg in sys.argv[1:]:
    overrides.update(parse_config_text(arg))

scenes = generate_scenes(SceneSpec(n_parts=3, image_size=(64, 64), part_scale=0.22), range(64))
images = np.stack([s.image for s in scenes])

import dataclasses
cfg = RunConfig(K=4, C=32, patch_size=8, input_size=(64, 64), batch_size=16,
                group_size=8, mask_ratio=0.9, steps=400, ckpt_every=100000)
cfg = dataclasses.replace(cfg, **overrides)
cfg.validate()
gh, gw = cfg.grid_size

gt_cells = np.stack([
    np.array([[np.bincount(s.labels[gy*8:(gy+1)*8, gx*8:(gx+1)*8].ravel(),
                           minlength=4).argmax() for gx in range(gw)]
              for gy in range(gh)]) for s in scenes])


def report(params, tag):
    raws = np.stack([filters.extract_raw_features(images[i], cfg.patch_size)
                     for i in range(len(images))])
    feats = model.project_features(raws, params["proj_w"], params["proj_b"])
    desc = model.extract_descriptors(
        params, ad.Tensor(raws.reshape(len(images), gh * gw, -1)), (gh, gw))
    from mpae import matching
    p = matching.similarity_map(desc, feats).data
    win = p.argmax(-1)
    k1 = cfg.K + 1
    print(f"--- {tag}")
    agree = ((win == cfg.K) == (gt_cells == 0)).mean()
    print(f"bg-channel/gt-bg agreement {agree:.3f}   P max mean {p.max(-1).mean():.3f}")
    # per channel: share of cells, fraction of its cells that are gt bg,
    # readout color of its mean descriptor
    m = params["desc_embed_w"].data @ params["desc_l1_wv"].data
    readout = np.linalg.pinv(m)
    for ch in range(k1):
        sel = win == ch
        share = sel.mean()
        bgfrac = (gt_cells[sel] == 0).mean() if sel.any() else float("nan")
        dmean = desc.data[:, ch, :].mean(axis=0)
        rgb = dmean @ readout[:, :3]
        print(f"  ch{ch}: share {share:.2f}  gt-bg-frac {bgfrac:.2f}  "
              f"readout rgb {np.round(rgb, 2)}")


state = training.TrainState(config=cfg, params=model.init_params(cfg))
report(state.params, "init")
with tempfile.TemporaryDirectory() as d:
    for stop in (100, 200, 400):
        cfg_stop = dataclasses.replace(cfg, steps=stop)
        state.config = cfg_stop
        training.train(cfg_stop, images, pathlib.Path(d) / str(stop), state=state,
                       quiet=True)
        report(state.params, f"step {stop}")
