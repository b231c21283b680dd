"""Batched detection-to-ground-truth matching.

Everything here works on whole ``(n, m, m_hat)`` arrays with broadcasting,
masking and indexing only; there is no loop over images or detections.
"""
from __future__ import annotations

import numpy as np

from .model import (
    FALSE_POSITIVE,
    IGNORED,
    TRUE_POSITIVE,
    CategoryMatrix,
    DetBatch,
    PaddedGtBatch,
    ValidationError,
)


def box_area(coords: np.ndarray) -> np.ndarray:
    return (coords[..., 2] - coords[..., 0] + 1) * (coords[..., 3] - coords[..., 1] + 1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of every box in ``a[..., p, 4]`` against every box in ``b[..., q, 4]``.

    Coordinates are inclusive, hence the ``+ 1`` on widths and heights.
    Leading axes broadcast; the result has shape ``(..., p, q)``.
    """
    a = a[..., :, None, :]
    b = b[..., None, :, :]
    w = np.maximum(0, np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]) + 1)
    h = np.maximum(0, np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]) + 1)
    inter = w * h
    return inter / (box_area(a) + box_area(b) - inter)


def pairwise_iou(det: DetBatch, gt: PaddedGtBatch) -> np.ndarray:
    """IoU cube of shape ``(n, m, m_hat)`` between detections and ground truth."""
    if det.n != gt.n:
        raise ValidationError(f"batch size mismatch: {det.n} detection rows vs {gt.n} ground-truth rows")
    return iou_matrix(det.coords, gt.coords)


def filter_iou(iou: np.ndarray, det: DetBatch, gt: PaddedGtBatch) -> np.ndarray:
    """Zero IoUs across different classes and for discarded detections.

    Padded ground-truth slots carry ``PAD_LABEL`` and so fall under the class
    mismatch rule.
    """
    invalid = det.labels[:, :, None] != gt.labels[:, None, :]
    invalid |= det.discard_mask[:, :, None]
    return np.where(invalid, 0.0, iou)


def categorize_below(iou: np.ndarray, det: DetBatch, t: float) -> CategoryMatrix:
    """Mark detections whose best filtered IoU is at most ``t`` as false positives.

    Discarded detections also land here (all their IoUs are zero) and are
    reset to ignored.
    """
    d = np.full(det.discard_mask.shape, IGNORED, dtype=np.int8)
    d[iou.max(axis=2) <= t] = FALSE_POSITIVE
    d[det.discard_mask] = IGNORED
    return CategoryMatrix(d)


def score_order(scores: np.ndarray) -> np.ndarray:
    """Per-row permutation sorting scores descending, ties by slot index."""
    return np.argsort(-scores, axis=1, kind="stable")


def categorize_above(
    d: CategoryMatrix,
    iou: np.ndarray,
    det: DetBatch,
    gt: PaddedGtBatch,
    t: float,
    sentinel: int | None = None,
) -> CategoryMatrix:
    """Resolve detections that clear ``t`` into true and false positives.

    IoUs against ignore-masked ground truth are dropped first, so a
    detection overlapping only difficult boxes stays ignored.  Among
    detections whose best remaining match is the same box, the
    highest-scoring one is the true positive.  The first-match search is a
    minimum over position codes ``1..m`` with non-candidates set to
    ``sentinel`` (default ``m + 1``).
    """
    n, m = det.discard_mask.shape
    m_hat = iou.shape[2]
    lam = m + 1 if sentinel is None else sentinel
    if lam <= m:
        raise ValidationError(f"sentinel must exceed the detection count {m}, got {lam}")

    o = np.where(gt.ignore_mask[:, None, :], 0.0, iou)
    above = o.max(axis=2) > t
    best = o.argmax(axis=2)

    order = score_order(det.scores)
    codes = np.take_along_axis(d.values, order, axis=1).copy()
    above = np.take_along_axis(above, order, axis=1)
    best = np.take_along_axis(best, order, axis=1)

    codes[above] = FALSE_POSITIVE
    onehot = (best[:, :, None] == np.arange(m_hat)) & above[:, :, None]
    position = onehot.transpose(0, 2, 1) * np.arange(1, m + 1)
    position[position == 0] = lam
    first = (position == position.min(axis=2, keepdims=True)) & (position < lam)
    codes[first.any(axis=1)] = TRUE_POSITIVE

    out = np.empty_like(codes)
    np.put_along_axis(out, order, codes, axis=1)
    return CategoryMatrix(out)


def categorize(iou: np.ndarray, det: DetBatch, gt: PaddedGtBatch, t: float) -> CategoryMatrix:
    """Both categorization passes on an already filtered IoU cube."""
    return categorize_above(categorize_below(iou, det, t), iou, det, gt, t)
