"""Frozen filter-bank features and the differentiable perceptual pyramid.

The filter bank is five separable 1-D kernels applied per RGB channel:
identity, horizontal and vertical central difference, and Gaussian blurs at
sigma 1 and 2 (radii 2 and 4).  Output channel order is op-major:
[id-R, id-G, id-B, dx-R, ..., g2-B], C_raw = 15.

Two consumers, two padding rules:
  * the frozen backbone uses edge-replicate padding, so a constant image
    yields spatially constant raw features;
  * the perceptual pyramid uses zero padding, whose exact adjoint is the
    flipped-kernel correlation registered as the custom VJP below.
No parameters anywhere in this module; gradients flow through pyramid
inputs only.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .errors import ValidationError

C_RAW = 15
FILTER_RADIUS = 4

_DERIV = np.array([0.5, 0.0, -0.5])


def _gaussian_kernel(sigma, radius):
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()

_G1 = _gaussian_kernel(1.0, 2)
_G2 = _gaussian_kernel(2.0, 4)

# (name, kernel or None, axes it runs over); axis 0 = rows, 1 = columns
FILTER_OPS = (
    ("id", None, ()),
    ("dx", _DERIV, (1,)),
    ("dy", _DERIV, (0,)),
    ("g1", _G1, (0, 1)),
    ("g2", _G2, (0, 1)),
)


def _apply_frozen(image, kernel, axes):
    out = image
    for axis in axes:
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    return out


def extract_raw_features(image, p):
    """Filter-bank responses patch-averaged onto the feature grid.

    Frozen path: plain ndarray in, (H/p)×(W/p)×15 ndarray out, no graph.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected H×W×3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h % p or w % p:
        raise ValidationError(f"image dims {h}×{w} not divisible by patch_size {p}")
    gh, gw = h // p, w // p
    raw = np.empty((gh, gw, C_RAW), dtype=np.float64)
    for op_index, (_, kernel, axes) in enumerate(FILTER_OPS):
        response = image if kernel is None else _apply_frozen(image, kernel, axes)
        pooled = response.reshape(gh, p, gw, p, 3).mean(axis=(1, 3))
        raw[:, :, op_index * 3:op_index * 3 + 3] = pooled
    return raw


def corr1d(x, kernel, axis):
    """Differentiable 1-D correlation with zero padding along ``axis``.

    Fused primitive: the forward pass is scipy's correlate1d; the adjoint of
    zero-padded centered correlation is correlation with the reversed kernel,
    which keeps the backward pass a single scipy call instead of a long chain
    of shift nodes.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.size % 2 == 0:
        raise ValidationError("corr1d requires an odd-length kernel")
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(x)
    out = ndimage.correlate1d(x.data, kernel, axis=axis, mode="constant", cval=0.0)
    flipped = kernel[::-1].copy()
    return ad.make_node(out, (x,), lambda g: (
        ndimage.correlate1d(g, flipped, axis=axis, mode="constant", cval=0.0),))


def filter_bank(images):
    """All 15 filter responses of a (B, H, W, 3) tensor, zero padding; differentiable."""
    if not isinstance(images, ad.Tensor):
        images = ad.Tensor(images)
    outs = []
    for _, kernel, axes in FILTER_OPS:
        r = images
        for axis in axes:
            r = corr1d(r, kernel, axis + 1)  # +1 for batch axis
        outs.append(r)
    return ad.concatenate(outs, axis=3)


def avgpool2(x):
    """2×2 average pooling of a (B, H, W, C) tensor; H and W must be even."""
    b, h, w, c = x.data.shape if isinstance(x, ad.Tensor) else x.shape
    if h % 2 or w % 2:
        raise ValidationError(f"avgpool2 needs even dims, got {h}×{w}")
    y = ad.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    return ad.tmean(y, axis=(2, 4))


def perceptual_pyramid(images, scales=3):
    """Filter-bank responses at ``scales`` resolutions (halved each time).

    The restoration loss compares pyramids of the target and the restored
    image; both sides run through this same function so identical inputs
    give exactly identical feature lists.
    """
    if not isinstance(images, ad.Tensor):
        images = ad.Tensor(images)
    levels = []
    current = images
    for level in range(scales):
        levels.append(filter_bank(current))
        if level + 1 < scales:
            current = avgpool2(current)
    return levels
