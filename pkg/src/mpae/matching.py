"""Similarity maps and descriptor fill.

The similarity map doubles as the soft part segmentation: channel k is the
per-cell probability that the cell belongs to part k (last channel =
background).  The fill step rebuilds a full feature grid from encoder
outputs on visible cells and descriptor mixtures on masked cells.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ValidationError


def similarity_map(descriptors, features):
    """P = softmax over parts of D·F per cell.

    descriptors: (B, K+1, C) or (K+1, C); features: (B, gh, gw, C) or
    (gh, gw, C).  Returns matching (B, gh, gw, K+1) / (gh, gw, K+1).
    Softmax subtracts the per-cell max, so large logits cannot overflow.
    """
    if not isinstance(descriptors, ad.Tensor):
        descriptors = ad.Tensor(descriptors)
    if not isinstance(features, ad.Tensor):
        features = ad.Tensor(features)
    d_shape, f_shape = descriptors.data.shape, features.data.shape
    if d_shape[-1] != f_shape[-1]:
        raise ValidationError(
            f"descriptor dim {d_shape[-1]} does not match feature dim {f_shape[-1]}")
    batched = features.data.ndim == 4
    if batched != (descriptors.data.ndim == 3):
        raise ValidationError("descriptors and features must be both batched or both unbatched")
    gh, gw = (f_shape[1], f_shape[2]) if batched else (f_shape[0], f_shape[1])
    k1 = d_shape[-2]
    if batched:
        flat = ad.reshape(features, (f_shape[0], gh * gw, f_shape[3]))
        logits = ad.matmul(flat, ad.transpose(descriptors, (0, 2, 1)))
        return ad.reshape(ad.softmax(logits, axis=-1), (f_shape[0], gh, gw, k1))
    flat = ad.reshape(features, (gh * gw, f_shape[2]))
    logits = ad.matmul(flat, ad.transpose(descriptors, (1, 0)))
    return ad.reshape(ad.softmax(logits, axis=-1), (gh, gw, k1))


def fill_masked(positions, unmasked_features, descriptors, similarity, mask,
                detach_p=False):
    """Filled feature grid R plus per-cell provenance.

    positions: (B, M, 2) cells of the visible patches (row-major order);
    unmasked_features: (B, M, C) encoder outputs; descriptors: (B, K+1, C);
    similarity: (B, gh, gw, K+1); mask: (B, gh, gw) with 1 = masked.
    R = encoder feature on visible cells, P-weighted descriptor mixture on
    masked cells.  Returns (R: (B, gh, gw, C) tensor, provenance: mask copy).
    ``detach_p`` blocks gradient flow from the fill back into P.
    """
    mask = np.asarray(mask)
    b, gh, gw = mask.shape
    n = gh * gw
    positions = np.asarray(positions)
    flat_positions = positions[:, :, 0] * gw + positions[:, :, 1]
    visible = np.zeros((b, n), dtype=bool)
    rows = np.repeat(np.arange(b), positions.shape[1])
    visible[rows, flat_positions.reshape(-1)] = True
    if not np.array_equal(visible, mask.reshape(b, n) == 0):
        raise ValidationError("positions are not exactly the unmasked cells of the mask")

    c = unmasked_features.data.shape[-1]
    if descriptors.data.shape[-1] != c:
        raise ValidationError(
            f"descriptor dim {descriptors.data.shape[-1]} does not match feature dim {c}")

    p_flat = ad.reshape(similarity, (b, n, similarity.data.shape[-1]))
    if detach_p:
        p_flat = ad.Tensor(p_flat.data)
    mixture = ad.matmul(p_flat, descriptors)

    batch_offsets = np.arange(b)[:, None] * n
    visible_idx = (batch_offsets + flat_positions).reshape(-1)
    masked_idx = np.flatnonzero(mask.reshape(-1))
    filled = ad.scatter((b * n, c), (visible_idx,),
                        ad.reshape(unmasked_features, (b * positions.shape[1], c)))
    if masked_idx.size:
        mixture_flat = ad.reshape(mixture, (b * n, c))
        filled = filled + ad.scatter((b * n, c), (masked_idx,), mixture_flat[masked_idx])
    return ad.reshape(filled, (b, gh, gw, c)), mask.copy()
