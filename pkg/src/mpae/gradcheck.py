"""Finite-difference verification of every loss and differentiable block.

Each component gets many small random instances; a seeded subset of input
coordinates is perturbed centrally and compared against the analytic
gradient.  Inputs are resampled away from kinks (abs, max, clamp floors)
before checking, since a subgradient at a kink is allowed to disagree with
the one-sided difference.

Relative error per coordinate is |a - f| / max(|a|, |f|, 1e-4); the floor
keeps near-zero gradients from demanding more precision than central
differences carry.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from . import autodiff as ad
from . import filters, losses, masking, matching, model
from .config import RunConfig
from .errors import ValidationError
from .rng import SeedStream

logger = logging.getLogger(__name__)

DEFAULT_INSTANCES = 20
DEFAULT_TOLERANCE = 1e-4
_REL_FLOOR = 1e-4
_FD_STEP = 1e-5
_PROBES_PER_INSTANCE = 40
_RESAMPLE_ATTEMPTS = 200


def _check_cfg():
    return RunConfig(K=2, C=8, patch_size=2, input_size=(8, 8), batch_size=2,
                     group_size=2, mask_ratio=0.5)


def _leaf(stream, shape, scale=1.0):
    return ad.Tensor(scale * stream.normal(shape), requires_grad=True)


def _max_rel_err(build, leaves, stream, h=_FD_STEP):
    """Worst probed relative error of analytic vs central-difference gradients."""
    for leaf in leaves:
        leaf.grad = None
    out = build()
    out.backward()
    coords = []
    for leaf in leaves:
        if leaf.grad is None:
            raise ValidationError("a leaf received no gradient; compute graph "
                                  "does not reach it")
        coords.extend((leaf, idx) for idx in range(leaf.data.size))
    order = stream.permutation(len(coords))
    chosen = [coords[i] for i in order[:_PROBES_PER_INSTANCE]]

    worst = 0.0
    for leaf, idx in chosen:
        flat = leaf.data.reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + h
        plus = float(build().data)
        flat[idx] = saved - h
        minus = float(build().data)
        flat[idx] = saved
        fd = (plus - minus) / (2.0 * h)
        analytic = float(leaf.grad.reshape(-1)[idx])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), _REL_FLOOR)
        worst = max(worst, rel)
    return worst


def _resample(stream, make_inputs, margin_ok):
    for _ in range(_RESAMPLE_ATTEMPTS):
        inputs = make_inputs(stream)
        if margin_ok(*inputs):
            return inputs
    raise ValidationError("could not sample inputs clear of kinks")


def _top2_gap(values, axis_flat):
    flat = values.reshape(values.shape[:axis_flat] + (-1,))
    part = np.sort(flat, axis=-1)
    return (part[..., -1] - part[..., -2]).min()


# --- loss components --------------------------------------------------------


def _check_restoration(stream):
    def make(stream):
        images = stream.uniform((1, 8, 8, 3)) * 0.6 + 0.2
        delta = 0.25 * stream.normal((1, 8, 8, 3))
        return images, ad.Tensor(images + delta, requires_grad=True)

    def ok(images, restored):
        delta = restored.data - images
        if np.abs(delta).min() < 1e-3:
            return False
        from .filters import perceptual_pyramid
        for level_i, level_r in zip(perceptual_pyramid(images),
                                    perceptual_pyramid(restored.data)):
            if np.abs(level_i.data - level_r.data).min() < 1e-4:
                return False
        return True

    images, restored = _resample(stream, make, ok)
    return _max_rel_err(
        lambda: losses.restoration_loss(images, restored), [restored], stream)


def _softmax_np(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_foreground(stream):
    def make(stream):
        return (_leaf(stream, (4, 3, 3, 3), scale=1.5),)

    def ok(logits):
        p = _softmax_np(logits.data)
        groups = p.reshape(2, 2, 3, 3, 3)
        fg = groups[..., :2]
        per_image = fg.reshape(4, -1)              # one row per batch sample
        per_part = np.moveaxis(fg, -1, 1).reshape(2, 2, -1)   # per (group, part)
        return (_top2_gap(per_image, 1) > 1e-3
                and _top2_gap(per_part, 2) > 1e-3)

    (logits,) = _resample(stream, make, ok)
    return _max_rel_err(
        lambda: losses.foreground_presence_loss(ad.softmax(logits, -1), 2),
        [logits], stream)


def _check_background(stream):
    weights = losses.center_distance_weights(3, 3)

    def make(stream):
        return (_leaf(stream, (2, 3, 3, 3), scale=1.5),)

    def ok(logits):
        p = _softmax_np(logits.data)
        scored = p[..., -1] * weights
        return _top2_gap(scored, 1) > 1e-3 and scored.max() > 1e-6

    (logits,) = _resample(stream, make, ok)
    return _max_rel_err(
        lambda: losses.background_presence_loss(ad.softmax(logits, -1), weights),
        [logits], stream)


def _check_semantic(stream):
    present = np.ones((2, 2), dtype=bool)

    def make(stream):
        return _leaf(stream, (2, 3, 6)), _leaf(stream, (2, 2, 6))

    def ok(descriptors, f_bar):
        d = descriptors.data[:, :2]
        f = f_bar.data
        cos = np.einsum("btc,bkc->btk", f, d)
        cos /= (np.linalg.norm(f, axis=-1)[:, :, None]
                * np.linalg.norm(d, axis=-1)[:, None, :])
        return np.abs(cos).max() < 0.99

    descriptors, f_bar = _resample(stream, make, ok)
    return _max_rel_err(
        lambda: losses.semantic_loss(descriptors, f_bar, present, 20.0, 0.5),
        [descriptors, f_bar], stream)


def _check_tv(stream):
    def make(stream):
        return (_leaf(stream, (1, 4, 4, 3), scale=2.0),)

    def ok(logits):
        p = _softmax_np(logits.data)
        dh = np.abs(np.diff(p, axis=1))
        dw = np.abs(np.diff(p, axis=2))
        return min(dh.min(), dw.min()) > 1e-4

    (logits,) = _resample(stream, make, ok)
    return _max_rel_err(lambda: losses.tv_loss(ad.softmax(logits, -1)),
                        [logits], stream)


def _check_entropy(stream):
    def make(stream):
        return (_leaf(stream, (2, 3, 3, 3), scale=1.5),)

    def ok(logits):
        return _softmax_np(logits.data).min() > 1e-9

    (logits,) = _resample(stream, make, ok)
    return _max_rel_err(lambda: losses.entropy_loss(ad.softmax(logits, -1)),
                        [logits], stream)


# --- differentiable blocks --------------------------------------------------


def _weighted_sum(output, stream):
    w = stream.normal(output.data.shape)
    return ad.tsum(output * ad.Tensor(w))


def _param_leaves(params, prefixes):
    return [params[name] for name in params
            if any(name.startswith(p) for p in prefixes)]


def _check_projection(stream):
    cfg = _check_cfg()
    params = model.init_params(cfg)
    raw = stream.normal((2, 4, 4, 15))
    w = stream.normal(raw.shape[:-1] + (cfg.C,))
    leaves = _param_leaves(params, ("proj_",))

    def build():
        out = model.project_features(raw, params["proj_w"], params["proj_b"])
        return ad.tsum(out * ad.Tensor(w))

    return _max_rel_err(build, leaves, stream)


def _check_descriptor_extractor(stream):
    cfg = _check_cfg()
    params = model.init_params(cfg)
    tokens = _leaf(stream, (2, 16, filters.C_RAW), scale=0.5)
    w = stream.normal((2, cfg.K + 1, cfg.C))
    leaves = [tokens] + _param_leaves(params, ("desc_",))

    def build():
        out = model.extract_descriptors(params, tokens, cfg.grid_size)
        return ad.tsum(out * ad.Tensor(w))

    return _max_rel_err(build, leaves, stream)


def _check_encoder(stream):
    cfg = _check_cfg()
    params = model.init_params(cfg)
    m = 8
    vectors = _leaf(stream, (2, m, cfg.patch_dim), scale=0.5)
    positions = np.stack([SeedStream(int(stream.below(2 ** 32)), "data").permutation(16)[:m]
                          for _ in range(2)])
    w = stream.normal((2, m, cfg.C))
    leaves = [vectors] + _param_leaves(params, ("enc_",))

    def build():
        out = model.encode_unmasked(params, vectors, positions, cfg.grid_size,
                                    cfg.encoder_layers)
        return ad.tsum(out * ad.Tensor(w))

    return _max_rel_err(build, leaves, stream)


def _check_decoder(stream):
    cfg = _check_cfg()
    params = model.init_params(cfg)
    filled = _leaf(stream, (1, 4, 4, cfg.C), scale=0.5)
    w = stream.normal((1, 8, 8, 3))
    leaves = [filled] + _param_leaves(params, ("dec_", "head_"))

    def build():
        out = model.decode(params, filled, cfg)
        return ad.tsum(out * ad.Tensor(w))

    return _max_rel_err(build, leaves, stream)


def _check_similarity(stream):
    descriptors = _leaf(stream, (2, 3, 6))
    features = _leaf(stream, (2, 3, 3, 6))
    w = stream.normal((2, 3, 3, 3))

    def build():
        out = matching.similarity_map(descriptors, features)
        return ad.tsum(out * ad.Tensor(w))

    return _max_rel_err(build, [descriptors, features], stream)


def _check_fill(stream):
    c = 6
    mask = masking.generate_mask((3, 3), 0.5, int(stream.below(2 ** 32)), 0)
    masks = np.stack([mask, mask])
    positions = np.stack([np.argwhere(m == 0) for m in masks])
    m_visible = positions.shape[1]
    encoded = _leaf(stream, (2, m_visible, c))
    descriptors = _leaf(stream, (2, 3, c))
    logits = _leaf(stream, (2, 3, 3, 3))
    w = stream.normal((2, 3, 3, c))

    def build():
        p_map = ad.softmax(logits, -1)
        filled, _ = matching.fill_masked(positions, encoded, descriptors,
                                         p_map, masks)
        return ad.tsum(filled * ad.Tensor(w))

    return _max_rel_err(build, [encoded, descriptors, logits], stream)


REGISTRY = {
    "restoration_loss": _check_restoration,
    "foreground_presence_loss": _check_foreground,
    "background_presence_loss": _check_background,
    "semantic_loss": _check_semantic,
    "tv_loss": _check_tv,
    "entropy_loss": _check_entropy,
    "projection": _check_projection,
    "descriptor_extractor": _check_descriptor_extractor,
    "encoder": _check_encoder,
    "decoder": _check_decoder,
    "similarity": _check_similarity,
    "fill": _check_fill,
}


def gradcheck(components=None, instances=DEFAULT_INSTANCES, seed=0,
              tolerance=DEFAULT_TOLERANCE):
    """Run the registry; returns a report dict with one row per component.

    ``components=None`` runs everything; an explicitly empty list is a
    vacuous pass with a warning.
    """
    if components is None:
        selected = list(REGISTRY)
    else:
        selected = list(components)
        unknown = [c for c in selected if c not in REGISTRY]
        if unknown:
            raise ValidationError(
                f"unknown gradcheck components: {unknown}; "
                f"known: {sorted(REGISTRY)}")
    if not selected:
        logger.warning("gradcheck ran with no components; vacuous pass")
        return {"components": [], "passed": True, "tolerance": tolerance,
                "warning": "no components selected"}

    rows = []
    all_passed = True
    started = time.monotonic()
    for name in selected:
        checker = REGISTRY[name]
        worst = 0.0
        for i in range(instances):
            stream = SeedStream(seed, "data",
                                sample_index=(hash_name(name) + i))
            worst = max(worst, checker(stream))
        passed = worst < tolerance
        all_passed &= passed
        rows.append({"component": name, "instances": instances,
                     "max_rel_err": worst, "passed": passed})
        logger.info("gradcheck %-28s max rel err %.3e %s", name, worst,
                    "ok" if passed else "FAIL")
    return {"components": rows, "passed": all_passed, "tolerance": tolerance,
            "elapsed_seconds": time.monotonic() - started}


def hash_name(name):
    # stable per-component offset so instance streams never collide
    return sum(ord(ch) * 131 ** i for i, ch in enumerate(name)) % 100_000


def format_report(report):
    lines = [f"{'component':<30} {'instances':>9} {'max rel err':>12}  status"]
    for row in report["components"]:
        lines.append(f"{row['component']:<30} {row['instances']:>9} "
                     f"{row['max_rel_err']:>12.3e}  "
                     f"{'ok' if row['passed'] else 'FAIL'}")
    if not report["components"]:
        lines.append("(no components selected)")
    lines.append(f"overall: {'pass' if report['passed'] else 'FAIL'} "
                 f"(tolerance {report['tolerance']:g})")
    return "\n".join(lines)
