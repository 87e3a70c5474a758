"""Patch decomposition, deterministic random masks, unmasked-patch selection.

A patch grid cell (i, j) holds the flattened (p, p, 3) pixel block starting
at row i*p, column j*p.  Masks live on the same grid as the backbone feature
map, which is what lets descriptor-filled cells line up with similarity-map
cells one-to-one.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .rng import SeedStream


def patchify(image, p):
    """Split an H×W×3 image into an (H/p)×(W/p) grid of 3p² patch vectors."""
    h, w = image.shape[0], image.shape[1]
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected H×W×3 image, got shape {tuple(image.shape)}")
    if h % p or w % p:
        raise ValidationError(f"image dims {h}×{w} not divisible by patch_size {p}")
    gh, gw = h // p, w // p
    if isinstance(image, ad.Tensor):
        x = ad.reshape(image, (gh, p, gw, p, 3))
        x = ad.transpose(x, (0, 2, 1, 3, 4))
        return ad.reshape(x, (gh, gw, 3 * p * p))
    x = image.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x).reshape(gh, gw, 3 * p * p)


def unpatchify(grid, p):
    """Inverse of patchify; accepts a leading batch axis."""
    batched = grid.ndim == 4
    shape = grid.shape if not isinstance(grid, ad.Tensor) else grid.data.shape
    gh, gw = (shape[1], shape[2]) if batched else (shape[0], shape[1])
    if shape[-1] != 3 * p * p:
        raise ValidationError(f"patch vectors of length {shape[-1]} do not match p={p}")
    lead = (shape[0],) if batched else ()
    if isinstance(grid, ad.Tensor):
        x = ad.reshape(grid, lead + (gh, gw, p, p, 3))
        x = ad.transpose(x, (0, 2, 1, 3, 4) if not batched else (0, 1, 3, 2, 4, 5))
        return ad.reshape(x, lead + (gh * p, gw * p, 3))
    x = grid.reshape(lead + (gh, gw, p, p, 3))
    x = x.transpose((0, 2, 1, 3, 4) if not batched else (0, 1, 3, 2, 4, 5))
    return np.ascontiguousarray(x).reshape(lead + (gh * p, gw * p, 3))


def mask_count(grid_dims, r):
    """Number of masked cells: floor(r * N)."""
    return int(math.floor(r * grid_dims[0] * grid_dims[1]))


def generate_mask(grid_dims, r, seed, sample_index):
    """Binary mask on the patch grid; 1 = masked, exactly floor(r*N) ones.

    Drawn from the (seed, "mask", sample_index) stream, so a sample's mask
    is independent of batch composition and reproducible in isolation.
    """
    if not 0.0 <= r <= 1.0:
        raise ValidationError(f"r must be in [0, 1], got {r}")
    gh, gw = grid_dims
    n = gh * gw
    k = mask_count(grid_dims, r)
    perm = SeedStream(seed, "mask", sample_index).permutation(n)
    flat = np.zeros(n, dtype=np.uint8)
    flat[perm[:k]] = 1
    return flat.reshape(gh, gw)


def select_unmasked(grid, mask):
    """Unmasked cells in row-major order: (positions (M,2), patch vectors (M,3p²))."""
    if grid.shape[:2] != mask.shape:
        raise ValidationError(f"grid dims {grid.shape[:2]} do not match mask dims {mask.shape}")
    keep = np.argwhere(mask == 0)
    return keep, grid[keep[:, 0], keep[:, 1]]
