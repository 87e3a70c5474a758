"""Dataset-level scoring of predicted part masks against annotations.

Pixels are pooled across the dataset for the headline NMI/ARI, restricted to
ground-truth foreground unless told otherwise; a label-shuffle baseline with
the same cardinalities calibrates how much of the score is structure rather
than chance.
"""

from __future__ import annotations

import json
import logging

import numpy as np

from .datagen import UNKNOWN_LABEL
from .errors import ValidationError
from .metrics import ari, nme, nmi
from .rng import SeedStream

logger = logging.getLogger(__name__)


def foreground_iou(pred_labels, gt_labels):
    """IoU of predicted foreground (label >= 1) vs annotated foreground."""
    pred_fg = np.asarray(pred_labels) >= 1
    gt_fg = np.asarray(gt_labels) >= 1
    if pred_fg.shape != gt_fg.shape:
        raise ValidationError(
            f"mask shapes differ: {pred_fg.shape} vs {gt_fg.shape}")
    union = np.logical_or(pred_fg, gt_fg).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred_fg, gt_fg).sum() / union)


def pooled_labels(pred_maps, gt_maps, include_background_pixels=False):
    """Concatenated (pred, gt) label vectors over the evaluation pixel universe.

    The universe is annotated-foreground pixels by default; unknown-annotation
    pixels are always excluded.
    """
    if len(pred_maps) != len(gt_maps) or not pred_maps:
        raise ValidationError("need equal nonempty lists of predicted and gt maps")
    pred_all, gt_all = [], []
    for pred, gt in zip(pred_maps, gt_maps):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValidationError(
                f"mask shapes differ: {pred.shape} vs {gt.shape}")
        keep = gt != UNKNOWN_LABEL
        if not include_background_pixels:
            keep &= gt >= 1
        pred_all.append(pred[keep])
        gt_all.append(gt[keep])
    pred_all = np.concatenate(pred_all)
    if pred_all.size == 0:
        raise ValidationError("evaluation pixel universe is empty")
    return pred_all, np.concatenate(gt_all)


def permutation_baseline(pred, gt, n_permutations=100, seed=0, norm="sqrt"):
    """Mean NMI of random shuffles of the predicted labels.

    Shuffling keeps the label cardinalities and the gt fixed, so the baseline
    answers: how much NMI does this label histogram get by chance?
    """
    pred = np.asarray(pred)
    scores = []
    for i in range(n_permutations):
        order = SeedStream(seed, "data", sample_index=i).permutation(pred.size)
        scores.append(nmi(pred[order], gt, norm=norm))
    return float(np.mean(scores))


def evaluate_masks(pred_maps, gt_maps, names=None, keypoints=None,
                   n_parts=None, include_background_pixels=False,
                   nmi_norm="sqrt", baseline_permutations=100,
                   baseline_seed=0, config_hash_value=None):
    """Full evaluation report for aligned lists of predicted and gt label maps.

    ``keypoints`` (aligned list of (J, 3) arrays, entries may be None) turns
    on the centroid-regression score; the first half of the images in list
    order is its train split, the rest the test split.  Returns a JSON-ready
    dict: headline scores, the shuffle baseline, and per-image rows.
    """
    pred_pool, gt_pool = pooled_labels(pred_maps, gt_maps,
                                       include_background_pixels)
    report = {
        "nmi": nmi(pred_pool, gt_pool, norm=nmi_norm),
        "ari": ari(pred_pool, gt_pool),
        "nme": None,
        "foreground_iou": float(np.mean([
            foreground_iou(p, np.where(np.asarray(g) == UNKNOWN_LABEL, 0, g))
            for p, g in zip(pred_maps, gt_maps)])),
        "pixels_evaluated": int(pred_pool.size),
        "include_background_pixels": bool(include_background_pixels),
        "nmi_norm": nmi_norm,
        "config_hash": config_hash_value,
        "random_baseline_nmi": permutation_baseline(
            pred_pool, gt_pool, baseline_permutations, baseline_seed,
            norm=nmi_norm) if baseline_permutations else None,
    }

    per_image = []
    for i, (pred, gt) in enumerate(zip(pred_maps, gt_maps)):
        row = {"name": names[i] if names else f"image_{i:04d}"}
        gt_arr = np.asarray(gt)
        known = gt_arr != UNKNOWN_LABEL
        universe = known & (gt_arr >= 1) if not include_background_pixels else known
        if universe.any():
            row["nmi"] = nmi(np.asarray(pred)[universe], gt_arr[universe],
                             norm=nmi_norm)
            row["ari"] = ari(np.asarray(pred)[universe], gt_arr[universe])
        else:
            row["nmi"] = row["ari"] = None
        row["foreground_iou"] = foreground_iou(
            pred, np.where(gt_arr == UNKNOWN_LABEL, 0, gt_arr))
        per_image.append(row)
    report["per_image"] = per_image

    if keypoints is not None:
        pairs = [(np.asarray(pred), kp)
                 for pred, kp in zip(pred_maps, keypoints) if kp is not None]
        if len(pairs) >= 2:
            if n_parts is None:
                n_parts = max(int(np.asarray(p).max(initial=0))
                              for p in pred_maps)
                n_parts = max(n_parts, 1)
            split = len(pairs) // 2
            try:
                nme_report = nme(pairs[:split], pairs[split:], n_parts)
                report["nme"] = nme_report["score"]
                report["nme_per_image"] = nme_report["per_image"]
            except ValidationError as exc:
                logger.warning("keypoint error skipped: %s", exc)
        else:
            logger.warning("keypoint error needs at least 2 annotated images")
    return report


def distinct_foreground_labels(pred_maps):
    """Mean number of distinct part labels (>= 1) per predicted map."""
    counts = [np.unique(np.asarray(m)[np.asarray(m) >= 1]).size
              for m in pred_maps]
    return float(np.mean(counts))


def foreground_fraction(pred_maps):
    """Fraction of all pixels predicted as foreground."""
    total = sum(np.asarray(m).size for m in pred_maps)
    fg = sum(int((np.asarray(m) >= 1).sum()) for m in pred_maps)
    return fg / total


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
