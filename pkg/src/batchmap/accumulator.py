"""Collect categorized detections across batches and turn them into PR curves."""
from __future__ import annotations

import numpy as np

from .model import TRUE_POSITIVE, Accumulator, CategoryMatrix, DetBatch, PrCurves, ValidationError


def new_accumulator(easy_gt_counts) -> Accumulator:
    return Accumulator(np.asarray(easy_gt_counts, dtype=np.int64).copy())


def extract(acc: Accumulator, d: CategoryMatrix, det: DetBatch) -> Accumulator:
    """Append every non-ignored detection of the batch to ``acc`` (in place)."""
    keep = d.values > 0
    rows, cols = np.nonzero(keep)
    acc.append(
        det.labels[keep],
        det.scores[keep],
        d.values[keep] == TRUE_POSITIVE,
        det.image_index[rows],
        cols,
    )
    return acc


def merge(a: Accumulator, b: Accumulator) -> Accumulator:
    """Concatenate two accumulators built over disjoint batches."""
    if a.k != b.k:
        raise ValidationError(f"cannot merge accumulators with {a.k} and {b.k} classes")
    if not np.array_equal(a.easy_gt_counts, b.easy_gt_counts):
        raise ValidationError("cannot merge accumulators with different easy GT counts")
    out = new_accumulator(a.easy_gt_counts)
    for src in (a, b):
        out._labels.extend(src._labels)
        out._scores.extend(src._scores)
        out._tp_flags.extend(src._tp_flags)
        out._image_index.extend(src._image_index)
        out._det_index.extend(src._det_index)
    return out


def global_order(scores: np.ndarray, image_index: np.ndarray, det_index: np.ndarray) -> np.ndarray:
    """Score descending, then image index, then detection index."""
    return np.lexsort((det_index, image_index, -scores))


def compute_pr(acc: Accumulator, k: int | None = None, epsilon: float = 1e-9) -> PrCurves:
    """Precision and recall of every class at once.

    Classes are separated with a one-hot ``(k, z)`` label mask; cumulative
    sums along the detection axis give the counts.  Classes without easy
    ground truth get recall 0.
    """
    k = acc.k if k is None else k
    if k != acc.k:
        raise ValidationError(f"accumulator holds {acc.k} classes, asked for {k}")
    order = global_order(acc.scores, acc.image_index, acc.det_index)
    labels = acc.labels[order]
    tp = acc.tp_flags[order]

    onehot = labels[None, :] == np.arange(k)[:, None]
    tp_cum = np.cumsum(onehot & tp, axis=1, dtype=np.int64)
    fp_cum = np.cumsum(onehot & ~tp, axis=1, dtype=np.int64)
    precision = tp_cum / np.maximum(tp_cum + fp_cum, epsilon)

    z_hat = acc.easy_gt_counts
    denom = np.where(z_hat > 0, z_hat, 1)[:, None]
    recall = np.where(z_hat[:, None] > 0, tp_cum / denom, 0.0)
    return PrCurves(precision, recall, z_hat.copy(), tp_cum, fp_cum)


def curves_from_counts(tp_flags: list, fp_flags: list, easy_gt_counts, epsilon: float = 1e-9) -> PrCurves:
    """Build ``PrCurves`` from separate per-class flag vectors.

    Rows of unequal length are extended by repeating their last cumulative
    count, which leaves every AP method unchanged.  Used to feed the
    sequential evaluator's output through the same AP code.
    """
    z_hat = np.asarray(easy_gt_counts, dtype=np.int64)
    k = len(z_hat)
    z = max((len(u) for u in tp_flags), default=0)
    tp_cum = np.zeros((k, z), dtype=np.int64)
    fp_cum = np.zeros((k, z), dtype=np.int64)
    for c in range(k):
        u = np.cumsum(np.asarray(tp_flags[c], dtype=np.int64))
        v = np.cumsum(np.asarray(fp_flags[c], dtype=np.int64))
        if len(u):
            tp_cum[c, : len(u)] = u
            tp_cum[c, len(u):] = u[-1]
            fp_cum[c, : len(v)] = v
            fp_cum[c, len(v):] = v[-1]
    precision = tp_cum / np.maximum(tp_cum + fp_cum, epsilon)
    denom = np.where(z_hat > 0, z_hat, 1)[:, None]
    recall = np.where(z_hat[:, None] > 0, tp_cum / denom, 0.0)
    return PrCurves(precision, recall, z_hat.copy(), tp_cum, fp_cum)


def class_totals(pr: PrCurves) -> tuple[np.ndarray, np.ndarray]:
    """Total TP and FP per class."""
    if pr.tp_cum.shape[1] == 0:
        zeros = np.zeros(pr.k, dtype=np.int64)
        return zeros, zeros.copy()
    return pr.tp_cum[:, -1].copy(), pr.fp_cum[:, -1].copy()
