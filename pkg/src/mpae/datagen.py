"""Synthetic part-annotated scenes and dataset directory I/O.

Scenes are single connected objects built from a few colored, textured shape
parts on a plain background, sized so appearance alone can tell the parts
apart.  The same directory layout (images/, masks/, keypoints.json) is what
the reader ingests, so generated and external datasets flow through one path.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .rng import SeedStream

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("ellipse", "rectangle", "triangle")
UNKNOWN_LABEL = -1      # gt sentinel for evaluation-only scenes
MIN_PART_PIXELS = 16
MIN_COLOR_DISTANCE = 0.3
MAX_BACKGROUND_FRACTION_USED = 0.8   # parts may cover at most this much
_PLACEMENT_ATTEMPTS = 60
_COLOR_ATTEMPTS = 1000


@dataclass
class SceneSpec:
    n_parts: int = 3
    image_size: tuple = (64, 64)
    occlude: bool = False
    noise: float = 0.05
    part_scale: float = 0.16    # part radius as a fraction of the short side

    def validate(self):
        h, w = self.image_size
        if self.n_parts < 1:
            raise ValidationError(f"n_parts must be >= 1, got {self.n_parts}")
        if h < 8 or w < 8:
            raise ValidationError(f"canvas {self.image_size} is too small")
        if not 0.0 <= self.noise < 0.5:
            raise ValidationError(f"noise must be in [0, 0.5), got {self.noise}")
        if not 0.02 <= self.part_scale <= 0.45:
            raise ValidationError(
                f"part_scale must be in [0.02, 0.45], got {self.part_scale}")
        # upper bound on covered area; parts that cannot fit are infeasible
        max_radius = 1.3 * self.part_scale * min(h, w)
        if self.n_parts * math.pi * max_radius ** 2 > MAX_BACKGROUND_FRACTION_USED * h * w:
            raise ValidationError(
                f"{self.n_parts} parts at scale {self.part_scale} cannot keep "
                f"20% background on a {h}x{w} canvas")


@dataclass
class LabeledScene:
    """Image in [0,1], integer gt map, keypoints (J, 3) of (x, y, visible)."""

    image: np.ndarray
    labels: np.ndarray
    keypoints: np.ndarray | None
    name: str = ""
    spec: SceneSpec | None = None
    parts: list = field(default_factory=list)   # (kind, color) per gt label


def _shape_mask(kind, shape, center, radius, angle, aspect):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx - center[0]) * math.cos(angle) + (yy - center[1]) * math.sin(angle)
    v = -(xx - center[0]) * math.sin(angle) + (yy - center[1]) * math.cos(angle)
    a, b = radius * aspect, radius / aspect
    if kind == "ellipse":
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == "rectangle":
        return (np.abs(u) <= a) & (np.abs(v) <= b)
    if kind == "triangle":
        angles = angle + np.array([0.0, 2.0, 4.0]) * math.pi / 3.0
        px = center[0] + 1.35 * radius * np.cos(angles)
        py = center[1] + 1.35 * radius * np.sin(angles)
        inside = np.ones(shape, dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            cross = ((px[j] - px[i]) * (yy - py[i])
                     - (py[j] - py[i]) * (xx - px[i]))
            inside &= cross >= 0 if _winding(px, py) > 0 else cross <= 0
        return inside
    raise ValidationError(f"unknown shape kind {kind!r}")


def _winding(px, py):
    return ((px[1] - px[0]) * (py[2] - py[0])
            - (py[1] - py[0]) * (px[2] - px[0]))


def _separated_colors(stream, count):
    for _ in range(_COLOR_ATTEMPTS):
        colors = 0.05 + 0.9 * stream.uniform((count, 3))
        deltas = colors[:, None, :] - colors[None, :, :]
        dist = np.sqrt((deltas ** 2).sum(-1))
        dist[np.diag_indices(count)] = np.inf
        if dist.min() >= MIN_COLOR_DISTANCE:
            return colors
    raise ValidationError(
        f"could not draw {count} colors separated by {MIN_COLOR_DISTANCE}")


def _place_parts(stream, spec):
    """Label map with parts painted in placement order, one connected object."""
    h, w = spec.image_size
    base = spec.part_scale * min(h, w)
    for _ in range(_PLACEMENT_ATTEMPTS):
        labels = np.zeros((h, w), dtype=np.int16)
        kinds, centers, radii = [], [], []
        ok = True
        for k in range(spec.n_parts):
            kind = SHAPE_KINDS[stream.below(len(SHAPE_KINDS))]
            radius = base * (0.8 + 0.4 * stream.uniform())
            if k == 0:
                cx = w / 2 + (stream.uniform() - 0.5) * 0.2 * w
                cy = h / 2 + (stream.uniform() - 0.5) * 0.2 * h
            else:
                anchor = stream.below(k)
                theta = 2.0 * math.pi * stream.uniform()
                gap = 0.75 * (radii[anchor] + radius)
                cx = centers[anchor][0] + gap * math.cos(theta)
                cy = centers[anchor][1] + gap * math.sin(theta)
            cx = min(max(cx, radius), w - 1 - radius)
            cy = min(max(cy, radius), h - 1 - radius)
            angle = 2.0 * math.pi * stream.uniform()
            aspect = 0.8 + 0.4 * stream.uniform()
            region = _shape_mask(kind, (h, w), (cx, cy), radius, angle, aspect)
            labels[region] = k + 1
            kinds.append(kind)
            centers.append((cx, cy))
            radii.append(radius)
        for k in range(spec.n_parts):
            if (labels == k + 1).sum() < MIN_PART_PIXELS:
                ok = False
        if not ok:
            continue
        foreground = labels > 0
        if foreground.mean() > MAX_BACKGROUND_FRACTION_USED:
            continue
        _, n_components = ndimage.label(foreground)
        if n_components != 1:
            continue
        return labels, kinds
    raise ValidationError(
        f"could not place {spec.n_parts} connected parts on "
        f"{spec.image_size} after {_PLACEMENT_ATTEMPTS} attempts")


def generate_scene(seed, spec):
    """Deterministic labeled scene for a (seed, spec) pair.

    The last-placed part is the one hidden by ``spec.occlude``; dropping it
    cannot disconnect the object because every part attaches to an earlier
    one.
    """
    spec.validate()
    stream = SeedStream(seed, "data")
    labels, kinds = _place_parts(stream, spec)
    colors = _separated_colors(stream, spec.n_parts + 1)

    occluded = spec.n_parts if spec.occlude else None
    if occluded is not None:
        labels[labels == occluded] = 0

    h, w = spec.image_size
    image = np.empty((h, w, 3))
    image[:] = colors[0]
    for k in range(1, spec.n_parts + 1):
        image[labels == k] = colors[k]
    image += spec.noise * stream.normal((h, w, 3))
    np.clip(image, 0.0, 1.0, out=image)

    keypoints = np.zeros((spec.n_parts, 3))
    for k in range(1, spec.n_parts + 1):
        rows, cols = np.nonzero(labels == k)
        if rows.size:
            cx, cy = cols.mean(), rows.mean()
            # overlap can carve a part nonconvex; keep the keypoint inside it
            if labels[int(round(cy)), int(round(cx))] != k:
                nearest = np.argmin((rows - cy) ** 2 + (cols - cx) ** 2)
                cx, cy = float(cols[nearest]), float(rows[nearest])
            keypoints[k - 1] = [cx, cy, 1.0]
    parts = [(kinds[k], tuple(colors[k + 1])) for k in range(spec.n_parts)]
    return LabeledScene(image=image, labels=labels, keypoints=keypoints,
                        name=f"scene_{seed:06d}", spec=spec, parts=parts)


def generate_scenes(spec, seeds):
    return [generate_scene(seed, spec) for seed in seeds]


# ---------------------------------------------------------------------------
# directory layout: images/, masks/ (8-bit indexed), keypoints.json


def write_dataset(directory, scenes):
    from PIL import Image

    from .inference import _palette

    directory = str(directory)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
    keypoints = {}
    for scene in scenes:
        if not scene.name:
            raise ValidationError("scenes need names to be written")
        rgb = np.clip(np.round(scene.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(
            os.path.join(directory, "images", scene.name + ".png"))
        if scene.labels is not None and not (scene.labels == UNKNOWN_LABEL).all():
            n_parts = int(scene.labels.max(initial=0))
            mask = Image.fromarray(scene.labels.astype(np.uint8), mode="P")
            mask.putpalette(_palette(max(n_parts, 1)))
            mask.save(os.path.join(directory, "masks", scene.name + ".png"))
        if scene.keypoints is not None:
            keypoints[scene.name] = np.asarray(scene.keypoints).tolist()
    if keypoints:
        with open(os.path.join(directory, "keypoints.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(keypoints, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_dataset(directory):
    """Stream scenes from a dataset directory in sorted filename order.

    Scenes without a mask get an all-UNKNOWN_LABEL gt map; scenes without
    keypoints get keypoints=None.  A mask whose dims differ from its image is
    a per-file error: the scene is skipped with a log entry.
    """
    from PIL import Image

    directory = str(directory)
    image_dir = os.path.join(directory, "images")
    if not os.path.isdir(image_dir):
        return
    mask_dir = os.path.join(directory, "masks")
    keypoint_path = os.path.join(directory, "keypoints.json")
    keypoints = {}
    if os.path.isfile(keypoint_path):
        with open(keypoint_path, "r", encoding="utf-8") as fh:
            keypoints = json.load(fh)

    mask_by_stem = {}
    if os.path.isdir(mask_dir):
        for fname in os.listdir(mask_dir):
            mask_by_stem[os.path.splitext(fname)[0]] = os.path.join(mask_dir, fname)

    for fname in sorted(os.listdir(image_dir)):
        stem = os.path.splitext(fname)[0]
        with Image.open(os.path.join(image_dir, fname)) as img:
            image = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        labels = np.full(image.shape[:2], UNKNOWN_LABEL, dtype=np.int16)
        if stem in mask_by_stem:
            with Image.open(mask_by_stem[stem]) as m:
                mask = np.asarray(m.convert("P") if m.mode != "P" else m,
                                  dtype=np.int16)
            if mask.shape != image.shape[:2]:
                logger.warning("skipping %s: mask dims %s do not match image "
                               "dims %s", fname, mask.shape, image.shape[:2])
                continue
            labels = mask
        kp = keypoints.get(stem)
        yield LabeledScene(
            image=image, labels=labels,
            keypoints=None if kp is None else np.asarray(kp, dtype=np.float64),
            name=stem)
