"""Clustering agreement scores and keypoint regression error.

Three families live here: mutual-information agreement (nmi), pair-counting
agreement (ari), and the centroid-to-keypoint regression error (nme).  A
brute-force ``contingency_oracle`` recomputes the first two from raw pair
enumeration so the fast paths can be checked against it.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

ORACLE_SIZE_CAP = 10_000


def _as_labels(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} is empty")
    return arr


def _canonical(labels):
    # relabel to first-occurrence order so identical partitions compare equal
    mapping = {}
    out = np.empty(labels.size, dtype=np.int64)
    for i, v in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(v, len(mapping))
    return out


def contingency_table(pred, gt):
    """Joint counts n[u, v] over pixels, with the label values for each axis."""
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    if pred.size != gt.size:
        raise ValidationError(
            f"label arrays differ in length: {pred.size} vs {gt.size}")
    pred_labels, pred_idx = np.unique(pred, return_inverse=True)
    gt_labels, gt_idx = np.unique(gt, return_inverse=True)
    counts = np.zeros((pred_labels.size, gt_labels.size), dtype=np.int64)
    np.add.at(counts, (pred_idx, gt_idx), 1)
    return counts, pred_labels, gt_labels


def nmi(pred, gt, norm="sqrt"):
    """Normalized mutual information between two labelings, in [0, 1].

    Conventions: identical partitions score 1.0 even when one (or both)
    labeling is constant; if either labeling is constant and the partitions
    differ the score is 0.0.  ``norm`` selects sqrt(H*H) (default) or the
    arithmetic mean of the entropies.
    """
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    if pred.size != gt.size:
        raise ValidationError(
            f"label arrays differ in length: {pred.size} vs {gt.size}")
    if norm not in ("sqrt", "mean"):
        raise ValidationError(f"unknown nmi norm {norm!r}; use 'sqrt' or 'mean'")
    if np.array_equal(_canonical(pred), _canonical(gt)):
        return 1.0
    counts, _, _ = contingency_table(pred, gt)
    n = counts.sum()
    joint = counts / n
    pu = joint.sum(axis=1)
    pv = joint.sum(axis=0)
    h_u = -np.sum(pu[pu > 0] * np.log(pu[pu > 0]))
    h_v = -np.sum(pv[pv > 0] * np.log(pv[pv > 0]))
    if h_u == 0.0 or h_v == 0.0:
        return 0.0
    nz = joint > 0
    mi = np.sum(joint[nz] * (np.log(joint[nz])
                             - np.log(np.outer(pu, pv)[nz])))
    mi = max(mi, 0.0)
    denom = math.sqrt(h_u * h_v) if norm == "sqrt" else 0.5 * (h_u + h_v)
    return float(min(mi / denom, 1.0))


def ari(pred, gt):
    """Adjusted Rand index via pair counting, in [-1, 1].

    Degenerate cases where the adjustment denominator vanishes (single
    element, both partitions trivial) score 1.0 by convention.
    """
    counts, _, _ = contingency_table(pred, gt)
    n = int(counts.sum())

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(counts.astype(np.float64)).sum()
    sum_a = comb2(counts.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(counts.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    if total == 0.0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0
    return float((sum_ij - expected) / (maximum - expected))


def contingency_oracle(pred, gt):
    """(NMI, ARI) by direct enumeration; the slow reference for both scores.

    Entropies and mutual information are summed cell by cell from a dict of
    observed label pairs; the Rand adjustment is taken from an explicit loop
    over all unordered element pairs.  Refuses inputs above ORACLE_SIZE_CAP.
    """
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    if pred.size != gt.size:
        raise ValidationError(
            f"label arrays differ in length: {pred.size} vs {gt.size}")
    n = pred.size
    if n > ORACLE_SIZE_CAP:
        raise ValidationError(
            f"oracle refuses inputs above {ORACLE_SIZE_CAP} elements, got {n}")
    pred_list = pred.tolist()
    gt_list = gt.tolist()

    joint: dict = {}
    left: dict = {}
    right: dict = {}
    for u, v in zip(pred_list, gt_list):
        joint[(u, v)] = joint.get((u, v), 0) + 1
        left[u] = left.get(u, 0) + 1
        right[v] = right.get(v, 0) + 1
    h_u = -sum((c / n) * math.log(c / n) for c in left.values())
    h_v = -sum((c / n) * math.log(c / n) for c in right.values())
    mi = sum((c / n) * math.log((c / n) / ((left[u] / n) * (right[v] / n)))
             for (u, v), c in joint.items())

    identical = len(joint) == len(left) == len(right)
    if identical:
        nmi_value = 1.0
    elif h_u == 0.0 or h_v == 0.0:
        nmi_value = 0.0
    else:
        nmi_value = min(max(mi, 0.0) / math.sqrt(h_u * h_v), 1.0)

    both_same = both_diff = pred_only = gt_only = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_pred = pred_list[i] == pred_list[j]
            same_gt = gt_list[i] == gt_list[j]
            if same_pred and same_gt:
                both_same += 1
            elif same_pred:
                pred_only += 1
            elif same_gt:
                gt_only += 1
            else:
                both_diff += 1
    denom = ((both_same + pred_only) * (pred_only + both_diff)
             + (both_same + gt_only) * (gt_only + both_diff))
    if denom == 0:
        ari_value = 1.0
    else:
        ari_value = 2.0 * (both_same * both_diff - pred_only * gt_only) / denom
    return float(nmi_value), float(ari_value)


# ---------------------------------------------------------------------------
# keypoint regression error


def part_centroids(labels, n_parts):
    """Mean (x, y) pixel coordinate per part label 1..n_parts of an integer map.

    A label with no pixels is imputed with the image center so the regression
    input keeps a fixed dimension when parts drop out.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValidationError(f"label map must be 2-d, got shape {labels.shape}")
    if n_parts < 1:
        raise ValidationError(f"n_parts must be >= 1, got {n_parts}")
    h, w = labels.shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    out = np.empty((n_parts, 2))
    for k in range(1, n_parts + 1):
        rows, cols = np.nonzero(labels == k)
        if rows.size == 0:
            out[k - 1] = center
        else:
            out[k - 1] = [cols.mean(), rows.mean()]
    return out


def fit_affine_map(inputs, targets):
    """Least-squares affine map from row vectors of ``inputs`` to ``targets``.

    Returns the (d_in + 1, d_out) parameter matrix; apply with
    ``predict_affine``.  Rank-deficient systems fall back to the minimum-norm
    solution with a logged warning.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or targets.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ValidationError(
            f"affine fit needs matching 2-d arrays, got {inputs.shape} and {targets.shape}")
    if inputs.shape[0] == 0:
        raise ValidationError("affine fit needs at least one sample")
    design = np.concatenate([inputs, np.ones((inputs.shape[0], 1))], axis=1)
    theta, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < min(design.shape):
        logger.warning(
            "affine regression is rank-deficient (rank %d of %d); using the "
            "minimum-norm solution", rank, min(design.shape))
    return theta


def predict_affine(theta, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    design = np.concatenate([inputs, np.ones((inputs.shape[0], 1))], axis=1)
    return design @ theta


def normalized_keypoint_error(predicted, keypoints, normalization):
    """Mean Euclidean error over visible keypoints divided by ``normalization``.

    ``predicted`` is (J, 2); ``keypoints`` is (J, 3) rows of (x, y, visible).
    Returns None when no keypoint is visible.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    keypoints = np.asarray(keypoints, dtype=np.float64)
    if keypoints.ndim != 2 or keypoints.shape[1] != 3:
        raise ValidationError(
            f"keypoints must be (J, 3) rows of (x, y, visible), got {keypoints.shape}")
    if predicted.shape != (keypoints.shape[0], 2):
        raise ValidationError(
            f"predicted points {predicted.shape} do not match keypoints "
            f"{keypoints.shape}")
    if normalization <= 0:
        raise ValidationError(f"normalization must be positive, got {normalization}")
    visible = keypoints[:, 2] > 0.5
    if not visible.any():
        return None
    errors = np.linalg.norm(predicted[visible] - keypoints[visible, :2], axis=1)
    return float(errors.mean() / normalization)


def nme(train, test, n_parts, normalization="diagonal", regressor="affine"):
    """Keypoint regression error of predicted part masks.

    ``train`` and ``test`` are lists of (label_map, keypoints) pairs;
    keypoints are (J, 3) rows of (x, y, visible), one J for the whole dataset.
    Part centroids of the train split fit an affine map to keypoint
    coordinates; the score is the mean normalized visible-keypoint error over
    the test split.  ``regressor="identity"`` skips the fit and reads
    centroids as predictions directly (requires J == n_parts), which is the
    no-regression diagnostic protocol.  ``normalization`` is the image
    diagonal by default, or any positive length.

    Returns dict with "score" and "per_image" (None entries for images whose
    keypoints are all invisible; those are excluded from the mean).
    """
    if regressor not in ("affine", "identity"):
        raise ValidationError(f"unknown regressor {regressor!r}")
    if not test:
        raise ValidationError("test split is empty")
    if regressor == "affine" and not train:
        raise ValidationError("train split is empty")

    def norm_length(labels):
        if normalization == "diagonal":
            h, w = np.asarray(labels).shape
            return math.hypot(h, w)
        return float(normalization)

    def centroid_row(labels):
        return part_centroids(labels, n_parts).reshape(-1)

    n_keypoints = np.asarray(test[0][1]).shape[0]
    for _, kp in list(train) + list(test):
        if np.asarray(kp).shape != (n_keypoints, 3):
            raise ValidationError(
                "keypoint sets must share one (J, 3) shape across the dataset")

    if regressor == "affine":
        x_train = np.stack([centroid_row(m) for m, _ in train])
        y_train = np.stack([np.asarray(kp, dtype=np.float64)[:, :2].reshape(-1)
                            for _, kp in train])
        theta = fit_affine_map(x_train, y_train)
        x_test = np.stack([centroid_row(m) for m, _ in test])
        predictions = predict_affine(theta, x_test).reshape(len(test), n_keypoints, 2)
    else:
        if n_keypoints != n_parts:
            raise ValidationError(
                f"identity regressor needs one keypoint per part, got "
                f"{n_keypoints} keypoints for {n_parts} parts")
        predictions = np.stack([part_centroids(m, n_parts) for m, _ in test])

    per_image = [normalized_keypoint_error(predictions[i], kp, norm_length(m))
                 for i, (m, kp) in enumerate(test)]
    scored = [e for e in per_image if e is not None]
    if not scored:
        raise ValidationError("no test image has a visible keypoint")
    if len(scored) < len(per_image):
        logger.warning("%d of %d test images have no visible keypoints; skipped",
                       len(per_image) - len(scored), len(per_image))
    return {"score": float(np.mean(scored)), "per_image": per_image}
