"""Pixel-level part masks from descriptors and an upsampled feature map.

Training matches descriptors against the coarse feature grid; at inference
the grid is bilinearly upsampled to image resolution first, then the same
similarity softmax and an argmax produce the integer mask.  Interpolation
happens before the softmax, and sampling is corner-aligned, so the map is
exact at source grid points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import filters, masking, matching, model
from .arrayio import load_array, save_array
from .errors import ValidationError

SOFT_ROW_SUM_TOL = 1e-6


@dataclass
class PartMasks:
    """Integer part map plus the soft assignment it was argmaxed from.

    labels: (H, W) int map, 0 background, 1..K parts.
    soft:   (H, W, K+1) probabilities, parts first, background last.
    """

    labels: np.ndarray
    soft: np.ndarray

    def __post_init__(self):
        if self.soft.ndim != 3 or self.labels.shape != self.soft.shape[:2]:
            raise ValidationError(
                f"label map {self.labels.shape} does not match soft map "
                f"{self.soft.shape}")
        row_sums = self.soft.sum(axis=-1)
        worst = float(np.abs(row_sums - 1.0).max())
        if worst > SOFT_ROW_SUM_TOL:
            raise ValidationError(
                f"soft map rows must sum to 1 within {SOFT_ROW_SUM_TOL}, "
                f"worst deviation {worst:.3e}")

    @property
    def n_parts(self):
        return self.soft.shape[-1] - 1


def interpolate_features(features, target):
    """Corner-aligned bilinear upsampling of an (H, W, C) feature map."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValidationError(
            f"feature map must be (H, W, C), got shape {features.shape}")
    h_src, w_src = features.shape[:2]
    h_dst, w_dst = target
    if h_dst < h_src or w_dst < w_src:
        raise ValidationError(
            f"target {target} is smaller than source ({h_src}, {w_src})")

    def axis_positions(src, dst):
        if dst == 1:
            return np.zeros(1)
        return np.arange(dst) * (src - 1) / (dst - 1)

    rows = axis_positions(h_src, h_dst)
    cols = axis_positions(w_src, w_dst)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h_src - 1)
    c1 = np.minimum(c0 + 1, w_src - 1)
    rf = (rows - r0)[:, None, None]
    cf = (cols - c0)[None, :, None]
    top = (1.0 - cf) * features[r0][:, c0] + cf * features[r0][:, c1]
    bottom = (1.0 - cf) * features[r1][:, c0] + cf * features[r1][:, c1]
    return (1.0 - rf) * top + rf * bottom


def labels_from_soft(soft):
    """Argmax over channels; ties go to the lowest index; background -> 0."""
    k = soft.shape[-1] - 1
    winner = np.argmax(soft, axis=-1)
    return np.where(winner == k, 0, winner + 1).astype(np.uint8)


def predict_masks(images, params, cfg, target=None):
    """Part masks for one image or a batch at a chosen output resolution.

    Descriptors come from the full (unmasked) image; dense features are
    projected from the frozen filter bank, upsampled to ``target`` (input
    resolution by default), and matched against the descriptors.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (*cfg.input_size, 3):
        raise ValidationError(
            f"expected images of shape {(*cfg.input_size, 3)}, got {images.shape[1:]}")
    if target is None:
        target = cfg.input_size
    grid = cfg.grid_size

    raw_all = np.stack([filters.extract_raw_features(images[b], cfg.patch_size)
                        for b in range(images.shape[0])])
    descriptors = model.extract_descriptors(
        params, ad.Tensor(raw_all.reshape(images.shape[0], grid[0] * grid[1], -1)),
        grid).data

    results = []
    for b in range(images.shape[0]):
        dense = model.project_features(raw_all[b], params["proj_w"], params["proj_b"]).data
        upsampled = interpolate_features(dense, target)
        soft = matching.similarity_map(
            ad.Tensor(descriptors[b]), ad.Tensor(upsampled)).data
        results.append(PartMasks(labels=labels_from_soft(soft), soft=soft))
    if single:
        return results[0]
    return results


# ---------------------------------------------------------------------------
# mask export: 8-bit indexed image + JSON sidecar

# label 0 is black; part colors are spread around the hue wheel
_PALETTE_ANCHORS = [
    (230, 70, 70), (70, 160, 230), (90, 200, 110), (235, 200, 80),
    (180, 110, 220), (240, 140, 60), (110, 220, 210), (200, 200, 200),
]


def _palette(n_parts):
    colors = [(0, 0, 0)]
    for k in range(n_parts):
        base = _PALETTE_ANCHORS[k % len(_PALETTE_ANCHORS)]
        fade = 1.0 / (1 + k // len(_PALETTE_ANCHORS))
        colors.append(tuple(int(round(c * fade)) for c in base))
    flat = [channel for color in colors for channel in color]
    return flat + [0] * (768 - len(flat))


def save_part_masks(path, masks, config_hash, soft_path=None):
    """Write the integer map as an indexed PNG plus a JSON sidecar.

    The sidecar (same stem, .json) records n_parts, the config hash, and the
    label legend.  Pass ``soft_path`` to also store the soft map as a dense
    array file.
    """
    from PIL import Image

    path = str(path)
    if masks.labels.max(initial=0) > masks.n_parts:
        raise ValidationError("label map contains labels above n_parts")
    img = Image.fromarray(masks.labels.astype(np.uint8), mode="P")
    img.putpalette(_palette(masks.n_parts))
    img.save(path, format="PNG")
    legend = {"0": "background"}
    legend.update({str(k): f"part {k}" for k in range(1, masks.n_parts + 1)})
    sidecar = {
        "n_parts": masks.n_parts,
        "config_hash": config_hash,
        "legend": legend,
    }
    if soft_path is not None:
        save_array(str(soft_path), masks.soft)
        sidecar["soft_map"] = str(soft_path)
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar_path(path):
    stem, dot, _ = str(path).rpartition(".")
    return (stem if dot else str(path)) + ".json"


def load_part_masks(path):
    """Read an exported mask back; returns (labels, sidecar dict)."""
    from PIL import Image

    with Image.open(path) as img:
        labels = np.asarray(img.convert("P") if img.mode != "P" else img,
                            dtype=np.uint8)
    try:
        with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = None
    if sidecar is not None and "soft_map" in sidecar:
        sidecar = dict(sidecar)
        sidecar["soft"] = load_array(sidecar["soft_map"])
    return labels, sidecar
