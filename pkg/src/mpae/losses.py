"""Training constraints: restoration, presence, semantic, and distribution
terms, plus the weighted total.

All losses accept batched tensors (leading B axis) and return scalar
tensors; batch reduction is the mean over samples.  Hard gates (part
presence) are computed on values, not graphs, so gradients flow only
through the continuous quantities, mirroring the presence-mask treatment
of the objective.

Numerical floors: logs are clamped at 1e-12, norm/mass denominators at
1e-8; both constants are part of the documented contract.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import autodiff as ad
from .errors import NumericalError, ValidationError
from .filters import perceptual_pyramid

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
DENOM_FLOOR = 1e-8


def _as_tensor(x):
    return x if isinstance(x, ad.Tensor) else ad.Tensor(x)


def restoration_loss(images, restored, use_perceptual=True, scales=3, pixel_weight=None):
    """½·mean|I−I'| plus ½·mean over pyramid scales of mean feature |Δ|.

    The second term is the structural penalty; ``use_perceptual=False``
    drops it (test hook).  ``pixel_weight`` optionally restricts the pixel
    term to a 0/1 map (B, H, W) — used by the masked-only loss variant; the
    structural term always sees whole images.
    """
    images = _as_tensor(images)
    restored = _as_tensor(restored)
    if images.data.shape != restored.data.shape:
        raise ValidationError(
            f"image dims {images.data.shape} do not match restored dims {restored.data.shape}")
    diff = ad.absolute(restored - images)
    if pixel_weight is None:
        pixel_term = ad.tmean(diff)
    else:
        w = np.asarray(pixel_weight, dtype=np.float64)[:, :, :, None]
        total = max(float(w.sum()) * 3.0, 1.0)
        pixel_term = ad.tsum(diff * ad.Tensor(np.broadcast_to(w, diff.data.shape))) * (1.0 / total)
    loss = 0.5 * pixel_term
    if use_perceptual:
        target_levels = perceptual_pyramid(images, scales=scales)
        restored_levels = perceptual_pyramid(restored, scales=scales)
        term = None
        for lt, lr in zip(target_levels, restored_levels):
            scale_term = ad.tmean(ad.absolute(lr - lt))
            term = scale_term if term is None else term + scale_term
        loss = loss + 0.5 * term * (1.0 / scales)
    return loss


def center_distance_weights(h_f, w_f):
    """d_{i,j} = 2((i−1)/(W_F−1)−½)² + 2((j−1)/(H_F−1)−½)², as an (H_F, W_F) grid.

    i runs over columns, j over rows, both 1-based in the formula; 0 at the
    exact center, 1.0 at all four corners.
    """
    if h_f < 2 or w_f < 2:
        raise ValidationError(f"distance weights need dims >= 2, got {h_f}×{w_f}")
    cols = np.arange(w_f, dtype=np.float64) / (w_f - 1) - 0.5
    rows = np.arange(h_f, dtype=np.float64) / (h_f - 1) - 0.5
    return 2.0 * cols[None, :] ** 2 + 2.0 * rows[:, None] ** 2


def foreground_presence_loss(p_map, group_size):
    """Mini-group presence constraint, in [0, 2].

    Per group of G samples: 2 − (1/G)·Σ_g max over cells and foreground
    parts − (1/K)·Σ_k max over cells and group members.  First term wants
    every image to show some part; second wants every part to appear
    somewhere in the group.  Background channel excluded from both maxima.
    """
    p_map = _as_tensor(p_map)
    b, gh, gw, k1 = p_map.data.shape
    if b % group_size:
        raise ValidationError(
            f"batch size ({b}) must be divisible by G ({group_size})")
    n_groups = b // group_size
    fg = p_map[:, :, :, :k1 - 1]
    grouped = ad.reshape(fg, (n_groups, group_size, gh, gw, k1 - 1))
    per_image = ad.amax(grouped, axis=(2, 3, 4))          # (groups, G)
    per_part = ad.amax(grouped, axis=(1, 2, 3))           # (groups, K)
    per_group = 2.0 - ad.tmean(per_image, axis=1) - ad.tmean(per_part, axis=1)
    return ad.tmean(per_group)


def background_presence_loss(p_map, distance_weights):
    """−mean over samples of log(max over cells of d·P_background).

    The product is clamped at 1e-12 before the log, so a background
    channel trapped at the exact center stays finite (≈ 27.63).
    """
    p_map = _as_tensor(p_map)
    b, gh, gw, k1 = p_map.data.shape
    if distance_weights.shape != (gh, gw):
        raise ValidationError(
            f"distance weights {distance_weights.shape} do not match grid {(gh, gw)}")
    weighted = p_map[:, :, :, k1 - 1] * ad.Tensor(distance_weights[None, :, :])
    best = ad.clamp_min(ad.amax(weighted, axis=(1, 2)), LOG_FLOOR)
    return -ad.tmean(ad.log(best))


def part_presence(p_map, threshold):
    """Boolean (B, K): part k present iff its similarity mass exceeds the cutoff."""
    data = p_map.data if isinstance(p_map, ad.Tensor) else np.asarray(p_map)
    sums = data[:, :, :, :-1].sum(axis=(1, 2))
    return sums > threshold


def mean_part_features(p_map, features):
    """F̄ = similarity-weighted mean feature per foreground part: (B, K, C).

    Denominator (part mass) clamped at 1e-8; rows of vanished parts are
    then near zero and must be gated out by the caller via part_presence.
    """
    p_map = _as_tensor(p_map)
    features = _as_tensor(features)
    b, gh, gw, k1 = p_map.data.shape
    if features.data.shape[:3] != (b, gh, gw):
        raise ValidationError(
            f"feature dims {features.data.shape} do not match similarity dims {p_map.data.shape}")
    n = gh * gw
    weights = ad.transpose(ad.reshape(p_map[:, :, :, :k1 - 1], (b, n, k1 - 1)), (0, 2, 1))
    feats = ad.reshape(features, (b, n, features.data.shape[3]))
    weighted = ad.matmul(weights, feats)                   # (B, K, C)
    mass = ad.clamp_min(ad.tsum(weights, axis=2, keepdims=True), DENOM_FLOOR)
    return weighted / mass


def _cosine_matrix(f_bar, d_fg):
    """cos θ_{(t,k)} between mean feature t and descriptor k: (B, K, K)."""
    # clamp inside the sqrt: sqrt(0) has an infinite slope, and a vanished
    # part (f̄ exactly 0) would otherwise poison the whole backward pass
    d_norm = ad.sqrt(ad.clamp_min(ad.tsum(d_fg * d_fg, axis=-1, keepdims=True), DENOM_FLOOR ** 2))
    f_norm = ad.sqrt(ad.clamp_min(ad.tsum(f_bar * f_bar, axis=-1, keepdims=True), DENOM_FLOOR ** 2))
    dn = d_fg / d_norm
    fn = f_bar / f_norm
    return ad.matmul(fn, ad.transpose(dn, (0, 2, 1)))


def semantic_loss(descriptors, f_bar, present, s, m):
    """Additive-angular-margin cross-entropy over present parts.

    For each present part k the positive logit is s·cos(θ_{(k,k)} + m) and
    the competitors are s·cos θ_{(t,k)} for the other present parts t; the
    margin is applied via cos(θ+m) = cosθ·cos m − sinθ·sin m.  Absent parts
    are excluded from both roles.  Samples with no present part contribute
    0 (with a warning); averaging is per sample over its present count,
    then over samples.
    """
    descriptors = _as_tensor(descriptors)
    f_bar = _as_tensor(f_bar)
    b, k1, _ = descriptors.data.shape
    k = k1 - 1
    present = np.asarray(present, dtype=bool)
    if present.shape != (b, k):
        raise ValidationError(f"presence must be (B, K) = {(b, k)}, got {present.shape}")
    cos_m, sin_m = math.cos(m), math.sin(m)
    cosine = _cosine_matrix(f_bar, descriptors[:, :k, :])
    total = None
    for sample in range(b):
        idx = np.flatnonzero(present[sample])
        t = idx.size
        if t == 0:
            log.warning("semantic loss: sample %d has no present parts; contributing 0", sample)
            continue
        sub = cosine[sample][idx][:, idx]                  # (T, T): [t, k]
        eye = np.eye(t)
        diag = ad.tsum(sub * ad.Tensor(eye), axis=0)       # cos θ_{(k,k)} per k
        sin_diag = ad.sqrt(ad.clamp_min(1.0 - diag * diag, LOG_FLOOR))
        diag_margin = diag * cos_m - sin_diag * sin_m
        logits = s * (sub * ad.Tensor(1.0 - eye) + ad.Tensor(eye) * ad.reshape(diag_margin, (1, t)))
        col_max = ad.amax(logits, axis=0, keepdims=True)
        lse = ad.log(ad.tsum(ad.exp(logits - col_max), axis=0)) + ad.reshape(col_max, (t,))
        positive = ad.tsum(logits * ad.Tensor(eye), axis=0)
        sample_loss = ad.tmean(lse - positive)
        total = sample_loss if total is None else total + sample_loss
    if total is None:
        log.warning("semantic loss: no sample has any present part; returning 0")
        return ad.Tensor(0.0)
    return total * (1.0 / b)


def tv_loss(p_map):
    """Total variation of the similarity map, normalized by cell count.

    Forward differences along both grid axes, absolute values, summed over
    channels; batch mean.
    """
    p_map = _as_tensor(p_map)
    if p_map.data.ndim == 3:
        p_map = ad.reshape(p_map, (1,) + p_map.data.shape)
    b, gh, gw, _ = p_map.data.shape
    if gh < 2 or gw < 2:
        raise ValidationError(f"tv loss needs a grid of at least 2×2, got {gh}×{gw}")
    dv = ad.tsum(ad.absolute(p_map[:, 1:, :, :] - p_map[:, :-1, :, :]))
    dh = ad.tsum(ad.absolute(p_map[:, :, 1:, :] - p_map[:, :, :-1, :]))
    return (dv + dh) * (1.0 / (gh * gw * b))


def entropy_loss(p_map, per_pixel=False):
    """−Σ P log P over cells and channels, divided by K+1 (paper normalization).

    0·log 0 is taken as 0; ``per_pixel`` additionally divides by the cell
    count.  Batch mean.
    """
    p_map = _as_tensor(p_map)
    if p_map.data.ndim == 3:
        p_map = ad.reshape(p_map, (1,) + p_map.data.shape)
    b, gh, gw, k1 = p_map.data.shape
    plogp = p_map * ad.log(ad.clamp_min(p_map, LOG_FLOOR))
    norm = k1 * b * (gh * gw if per_pixel else 1)
    return -ad.tsum(plogp) * (1.0 / norm)


def concentration_loss_baseline(p_map):
    """Squared-distance-to-centroid weighting; sweep-only ablation baseline.

    Per foreground part: soft centroid of its similarity mass, then the
    mass-weighted mean squared distance to it, coordinates normalized to
    [0, 1].  Mean over parts and samples.
    """
    p_map = _as_tensor(p_map)
    if p_map.data.ndim == 3:
        p_map = ad.reshape(p_map, (1,) + p_map.data.shape)
    b, gh, gw, k1 = p_map.data.shape
    k = k1 - 1
    rows = np.arange(gh, dtype=np.float64) / max(gh - 1, 1)
    cols = np.arange(gw, dtype=np.float64) / max(gw - 1, 1)
    coords = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1).reshape(gh * gw, 2)
    fg = ad.transpose(ad.reshape(p_map[:, :, :, :k], (b, gh * gw, k)), (0, 2, 1))  # (B, K, N)
    mass = ad.clamp_min(ad.tsum(fg, axis=2, keepdims=True), DENOM_FLOOR)
    weights = fg / mass
    centroids = ad.matmul(weights, ad.Tensor(coords))      # (B, K, 2)
    sq = (ad.reshape(centroids, (b, k, 1, 2)) - ad.Tensor(coords.reshape(1, 1, gh * gw, 2))) ** 2
    dist2 = ad.tsum(sq, axis=3)                            # (B, K, N)
    return ad.tmean(ad.tsum(weights * dist2, axis=2))


def total_loss(terms, lambda_p, lambda_s, lambda_d):
    """Weighted objective and a float breakdown for the step log.

    terms: dict with any of restoration / foreground / background /
    semantic / tv / entropy mapped to scalar tensors; missing entries count
    as zero (that is how the without-* ablations drop a constraint).
    """
    weights = {"restoration": 1.0, "foreground": lambda_p, "background": lambda_p,
               "semantic": lambda_s, "tv": lambda_d, "entropy": lambda_d}
    unknown = set(terms) - set(weights)
    if unknown:
        raise ValidationError(f"unknown loss terms: {sorted(unknown)}")
    breakdown = {}
    total = None
    for name, weight in weights.items():
        term = terms.get(name)
        if term is None:
            continue
        value = float(term.data)
        if not math.isfinite(value):
            raise NumericalError(f"loss term {name!r} is not finite: {value}")
        breakdown[name] = value
        if weight == 0.0:
            continue
        weighted = term * weight
        total = weighted if total is None else total + weighted
    if total is None:
        total = ad.Tensor(0.0)
    breakdown["total"] = float(total.data)
    return total, breakdown
