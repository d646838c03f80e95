"""Segmentation and calibration metrics: IoU, F1/Dice, weighted coverage,
boundary F-score, and the 10-bin calibration score."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FBOUND_THRESHOLDS = (1, 2, 3, 4, 5)
CALIBRATION_BINS = 10

# 4-connectivity for components and boundary extraction
_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(pred, gt):
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred & gt)),
        fp=int(np.sum(pred & ~gt)),
        fn=int(np.sum(~pred & gt)),
        tn=int(np.sum(~pred & ~gt)),
    )


def _as_bool(mask):
    arr = np.asarray(mask)
    return arr.astype(bool).reshape(arr.shape[-2:]) if arr.ndim > 2 else arr.astype(bool)


def iou(pred, gt):
    """TP / (TP + FN + FP); both-empty pairs count as 1.0."""
    c = confusion(pred, gt)
    denom = c.tp + c.fn + c.fp
    return 1.0 if denom == 0 else c.tp / denom


def miou(pred_masks, gt_masks):
    """Mean of per-sample IoU over a set."""
    return float(np.mean([iou(p, g) for p, g in zip(pred_masks, gt_masks)]))


def f1(pred, gt):
    """Dice: 2TP / (2TP + FP + FN); both-empty pairs count as 1.0."""
    c = confusion(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def wcov(pred, gt):
    """Area-weighted best-match IoU of ground-truth connected components."""
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    gt_labels, n_gt = ndimage.label(gt, structure=_STRUCTURE)
    if n_gt == 0:
        return 1.0 if not pred.any() else 0.0
    pred_labels, n_pred = ndimage.label(pred, structure=_STRUCTURE)
    total = 0.0
    for g in range(1, n_gt + 1):
        gmask = gt_labels == g
        area = gmask.sum()
        best = 0.0
        for p in range(1, n_pred + 1):
            pmask = pred_labels == p
            inter = np.sum(gmask & pmask)
            if inter == 0:
                continue
            best = max(best, inter / np.sum(gmask | pmask))
        total += area * best
    return float(total / gt.sum())


def boundary(mask):
    """Foreground pixels 4-adjacent to background; pixels on the image edge
    count as boundary (outside is background)."""
    mask = _as_bool(mask)
    interior = ndimage.binary_erosion(mask, structure=_STRUCTURE, border_value=0)
    return mask & ~interior


def fbound(pred, gt, thresholds=FBOUND_THRESHOLDS):
    """Boundary F-score averaged over pixel-distance thresholds.

    Precision at distance d is the fraction of predicted boundary pixels
    within Euclidean distance d of a ground-truth boundary pixel; recall is
    symmetric.
    """
    pb = boundary(pred)
    gb = boundary(gt)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~gb)
    dist_to_pred = ndimage.distance_transform_edt(~pb)
    pred_dists = dist_to_gt[pb]
    gt_dists = dist_to_pred[gb]
    scores = []
    for d in thresholds:
        precision = np.mean(pred_dists <= d)
        recall = np.mean(gt_dists <= d)
        scores.append(0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


@dataclass
class CalibrationReport:
    bin_edges: np.ndarray  # 11 edges over [0, 1]
    counts: np.ndarray  # pixels per bin
    mean_confidence: np.ndarray  # NaN for empty bins
    positive_fraction: np.ndarray  # NaN for empty bins
    score: float


def calibration_score(mean_maps, gt_masks, weighted=False):
    """Pool pixels from probability maps into ten uniform bins and average the
    squared gap between mean confidence and positive rate.

    Bins are [k/10, (k+1)/10), the last closed at 1.0. Empty bins are
    excluded; ``weighted`` switches the unweighted bin mean to a
    pixel-count-weighted mean.
    """
    probs = np.concatenate([np.asarray(m).ravel() for m in mean_maps])
    labels = np.concatenate([np.asarray(g).ravel() for g in gt_masks]).astype(bool)
    if probs.shape != labels.shape:
        raise ValueError("probability maps and masks have different pixel counts")
    if probs.min() < 0 or probs.max() > 1:
        raise ValueError("probabilities outside [0, 1]")
    edges = np.linspace(0.0, 1.0, CALIBRATION_BINS + 1)
    idx = np.minimum((probs * CALIBRATION_BINS).astype(int), CALIBRATION_BINS - 1)
    counts = np.bincount(idx, minlength=CALIBRATION_BINS)
    conf = np.full(CALIBRATION_BINS, np.nan)
    pos = np.full(CALIBRATION_BINS, np.nan)
    nonempty = counts > 0
    conf[nonempty] = np.bincount(idx, weights=probs, minlength=CALIBRATION_BINS)[nonempty] / counts[nonempty]
    pos[nonempty] = np.bincount(idx, weights=labels, minlength=CALIBRATION_BINS)[nonempty] / counts[nonempty]
    gaps = (conf[nonempty] - pos[nonempty]) ** 2
    if weighted:
        score = float(np.sum(gaps * counts[nonempty]) / counts.sum())
    else:
        score = float(np.mean(gaps))
    return CalibrationReport(
        bin_edges=edges,
        counts=counts,
        mean_confidence=conf,
        positive_fraction=pos,
        score=score,
    )
