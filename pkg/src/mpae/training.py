"""Masked-restoration training: batching, the five-term objective, Adam.

The whole loop is deterministic given (config, dataset): batch order comes
from a per-epoch seeded shuffle, per-sample masks from counter-based streams
keyed by dataset index, and all arithmetic is float64 numpy on one thread.
Checkpoints therefore reproduce bit-identically, which is what the resume
contract leans on.
"""

from __future__ import annotations

import json
import logging
import os
import time

import numpy as np

from . import autodiff as ad
from . import filters, masking, matching, model
from .checkpoint import TrainState, save_checkpoint
from .errors import NumericalError, ValidationError
from .losses import (background_presence_loss, center_distance_weights,
                     entropy_loss, foreground_presence_loss, mean_part_features,
                     part_presence, restoration_loss, semantic_loss, total_loss,
                     tv_loss)
from .rng import SeedStream

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"
NAN_DUMP_NAME = "nan_batch.json"


def batch_order(seed, n_scenes, epoch):
    """Shuffled dataset indices for one epoch; a function of (seed, epoch) only."""
    return SeedStream(seed, "data", sample_index=epoch).permutation(n_scenes)


def mask_sample_index(cfg, epoch, dataset_index, n_scenes):
    # fresh masks each epoch unless pinned; dataset_index keeps a sample's
    # mask independent of where the shuffle put it
    if cfg.fixed_masks:
        return int(dataset_index)
    return int(epoch) * int(n_scenes) + int(dataset_index)


def forward_batch(params, cfg, images, masks):
    """Blocks a-d for one batch; returns the loss terms and the soft maps.

    images: (B, H, W, 3) float64; masks: (B, gh, gw) uint8, 1 = masked.
    """
    b = images.shape[0]
    grid = cfg.grid_size
    gh, gw = grid

    raw = np.stack([filters.extract_raw_features(images[i], cfg.patch_size)
                    for i in range(b)])
    features = model.project_features(raw, params["proj_w"], params["proj_b"])
    descriptors = model.extract_descriptors(
        params, ad.Tensor(raw.reshape(b, gh * gw, -1)), grid)

    patch_grids = [masking.patchify(images[i], cfg.patch_size) for i in range(b)]

    p_map = matching.similarity_map(descriptors, features)

    positions = []
    visible_vectors = []
    for i in range(b):
        pos, vec = masking.select_unmasked(patch_grids[i], masks[i])
        positions.append(pos)
        visible_vectors.append(vec)
    positions = np.stack(positions)
    visible_vectors = np.stack(visible_vectors)
    flat_positions = positions[:, :, 0] * gw + positions[:, :, 1]
    encoded = model.encode_unmasked(params, ad.Tensor(visible_vectors),
                                    flat_positions, grid, cfg.encoder_layers)

    filled, _ = matching.fill_masked(positions, encoded, descriptors, p_map,
                                     masks, detach_p=cfg.detach_p_in_fill)
    restored = model.decode(params, filled, cfg)

    pixel_weight = None
    if cfg.loss_on_masked_only:
        pixel_weight = np.repeat(np.repeat(masks, cfg.patch_size, axis=1),
                                 cfg.patch_size, axis=2).astype(np.float64)

    terms = {"restoration": restoration_loss(images, restored,
                                             pixel_weight=pixel_weight)}
    if not cfg.without_foreground:
        terms["foreground"] = foreground_presence_loss(p_map, cfg.group_size)
    if not cfg.without_background:
        terms["background"] = background_presence_loss(
            p_map, center_distance_weights(gh, gw))
    if not cfg.without_semantic:
        present = part_presence(p_map, cfg.presence_threshold)
        f_bar = mean_part_features(p_map, features)
        terms["semantic"] = semantic_loss(descriptors, f_bar, present,
                                          cfg.s, cfg.m)
    if not cfg.without_tv:
        terms["tv"] = tv_loss(p_map)
    if not cfg.without_entropy:
        terms["entropy"] = entropy_loss(p_map, per_pixel=cfg.entropy_per_pixel)
    return terms, p_map, restored


def adam_step(state, grads):
    cfg = state.config
    t = state.step + 1
    correction1 = 1.0 - cfg.adam_beta1 ** t
    correction2 = 1.0 - cfg.adam_beta2 ** t
    for name, param in state.params.items():
        if model.frozen_param(name):
            continue
        g = grads[name]
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _advance_cursor(state, n_scenes, batch_size):
    """Dataset indices for the next step, advancing the (epoch, offset) cursor."""
    per_epoch = n_scenes // batch_size
    if per_epoch == 0:
        raise ValidationError(
            f"dataset of {n_scenes} scenes is smaller than batch_size {batch_size}")
    if state.rng_offset + batch_size > per_epoch * batch_size:
        state.rng_epoch += 1
        state.rng_offset = 0
    order = batch_order(state.config.seed, n_scenes, state.rng_epoch)
    chosen = order[state.rng_offset:state.rng_offset + batch_size]
    state.rng_offset += batch_size
    return chosen


def train_step(state, images_all, out_dir=None):
    """One optimization step; returns the logged record."""
    cfg = state.config
    n_scenes = images_all.shape[0]
    indices = _advance_cursor(state, n_scenes, cfg.batch_size)
    epoch = state.rng_epoch
    images = images_all[indices]
    masks = np.stack([
        masking.generate_mask(cfg.grid_size, cfg.mask_ratio, cfg.seed,
                              mask_sample_index(cfg, epoch, i, n_scenes))
        for i in indices])

    for param in state.params.values():
        param.grad = None
    terms, _, _ = forward_batch(state.params, cfg, images, masks)
    try:
        total, breakdown = total_loss(terms, cfg.lambda_p, cfg.lambda_s,
                                      cfg.lambda_d)
    except NumericalError:
        if out_dir is not None:
            dump = {"step": state.step, "epoch": epoch,
                    "batch_indices": [int(i) for i in indices],
                    "terms": {k: float(v.data) for k, v in terms.items()}}
            with open(os.path.join(out_dir, NAN_DUMP_NAME), "w",
                      encoding="utf-8") as fh:
                json.dump(dump, fh, indent=2)
                fh.write("\n")
        logger.error("non-finite loss at step %d; offending batch indices: %s",
                     state.step, [int(i) for i in indices])
        raise
    total.backward()
    grads = {name: param.grad for name, param in state.params.items()}
    adam_step(state, grads)
    state.step += 1
    return {"step": state.step, "epoch": epoch,
            "batch_indices": [int(i) for i in indices], "losses": breakdown}


def train(cfg, images_all, out_dir, state=None, quiet=False):
    """Run cfg.steps optimization steps, logging and checkpointing on the way.

    ``state`` resumes from a loaded checkpoint; otherwise parameters are
    freshly initialized.  Returns the final TrainState.  The JSONL log gets
    one record per step; a checkpoint lands every cfg.ckpt_every steps and at
    the end.
    """
    images_all = np.ascontiguousarray(np.asarray(images_all, dtype=np.float64))
    if images_all.ndim != 4 or images_all.shape[1:] != (*cfg.input_size, 3):
        raise ValidationError(
            f"expected scenes of shape {(*cfg.input_size, 3)}, got "
            f"{images_all.shape[1:]}")
    os.makedirs(out_dir, exist_ok=True)
    if state is None:
        state = TrainState(config=cfg, params=model.init_params(cfg))
    elif state.config != cfg:
        raise ValidationError("resumed state carries a different config")

    log_path = os.path.join(out_dir, LOG_NAME)
    started = time.monotonic()
    with open(log_path, "a", encoding="utf-8") as log:
        while state.step < cfg.steps:
            record = train_step(state, images_all, out_dir=out_dir)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            if state.step % cfg.ckpt_every == 0 or state.step == cfg.steps:
                save_checkpoint(_ckpt_dir(out_dir, state.step), state)
            if not quiet and (state.step % 50 == 0 or state.step == cfg.steps):
                logger.info("step %d/%d total %.4f (%.1fs)", state.step,
                            cfg.steps, record["losses"]["total"],
                            time.monotonic() - started)
    return state


def _ckpt_dir(out_dir, step):
    return os.path.join(out_dir, f"ckpt_{step:06d}")


def read_log(out_dir):
    path = os.path.join(out_dir, LOG_NAME)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
