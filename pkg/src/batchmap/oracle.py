"""Sequential reference evaluator and synthetic workload generator.

``sequential_evaluate`` is the classic one-class-at-a-time, one-detection-
at-a-time loop.  It is deliberately left unvectorized: it serves as the
trusted baseline the batched pipeline is checked and timed against.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Dataset, count_easy_gt
from .model import (
    FALSE_POSITIVE,
    TRUE_POSITIVE,
    ImageDetections,
    ImageGroundTruth,
    ValidationError,
)


@dataclass(frozen=True)
class SequentialResult:
    """Output of the reference loop.

    Per class ``c``: ``precision[c]``/``recall[c]`` have one entry per
    non-discarded detection of that class in score order (ignored
    detections repeat the previous point), ``tp_flags``/``fp_flags`` are
    the raw 0/1 vectors and ``points[c]`` the ``(image, detection)`` index
    of each entry.  ``categories[i]`` holds the code of every detection of
    image ``i`` in file order.
    """

    precision: list
    recall: list
    tp_flags: list
    fp_flags: list
    points: list
    tp: np.ndarray
    fp: np.ndarray
    easy_gt_counts: np.ndarray
    categories: list


def sequential_evaluate(dataset: Dataset, t: float, k: int | None = None, epsilon: float = 1e-9) -> SequentialResult:
    if k is None:
        k = max(1, dataset.max_label() + 1)
    z_hat = count_easy_gt(dataset, k)

    gt_boxes = [np.asarray(g.boxes, dtype=np.float64).reshape(-1, 4) for g in dataset.ground_truth]
    gt_labels = [np.asarray(g.labels, dtype=np.int64) for g in dataset.ground_truth]
    gt_hard = [np.asarray(g.difficult, dtype=bool) for g in dataset.ground_truth]
    matched = [np.zeros(len(g), dtype=bool) for g in dataset.ground_truth]
    categories = [np.zeros(len(d), dtype=np.int8) for d in dataset.detections]

    by_class: list[list] = [[] for _ in range(k)]
    for i, dets in enumerate(dataset.detections):
        for j, (box, label, score, dropped) in enumerate(zip(dets.boxes, dets.labels, dets.scores, dets.discarded)):
            if dropped:
                continue
            if label >= k:
                raise ValidationError(f"label {label} out of range [0, {k})")
            by_class[label].append((-score, i, j, box))

    precision, recall, tps, fps, points = [], [], [], [], []
    for c in range(k):
        entries = sorted(by_class[c], key=lambda e: (e[0], e[1], e[2]))
        u = np.zeros(len(entries), dtype=np.int64)
        v = np.zeros(len(entries), dtype=np.int64)
        for j, (_, img, det_idx, b) in enumerate(entries):
            same = np.nonzero(gt_labels[img] == c)[0]
            gts = gt_boxes[img][same]
            iou = -np.inf
            if len(gts) > 0:
                w = np.maximum(0, np.minimum(b[2], gts[:, 2]) - np.maximum(b[0], gts[:, 0]) + 1)
                h = np.maximum(0, np.minimum(b[3], gts[:, 3]) - np.maximum(b[1], gts[:, 1]) + 1)
                a = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
                a_hat = (gts[:, 2] - gts[:, 0] + 1) * (gts[:, 3] - gts[:, 1] + 1)
                o = (w * h) / (a + a_hat - w * h)
                iou = np.max(o)
                best = same[np.argmax(o)]
            if iou > t:
                if not gt_hard[img][best]:
                    if not matched[img][best]:
                        u[j] = 1
                        matched[img][best] = True
                        categories[img][det_idx] = TRUE_POSITIVE
                    else:
                        v[j] = 1
                        categories[img][det_idx] = FALSE_POSITIVE
            else:
                v[j] = 1
                categories[img][det_idx] = FALSE_POSITIVE
        cu, cv = np.cumsum(u), np.cumsum(v)
        precision.append(cu / np.maximum(cu + cv, epsilon))
        recall.append(cu / z_hat[c] if z_hat[c] > 0 else np.zeros(len(cu)))
        tps.append(u)
        fps.append(v)
        points.append([(e[1], e[2]) for e in entries])

    tp = np.array([int(u.sum()) for u in tps], dtype=np.int64)
    fp = np.array([int(v.sum()) for v in fps], dtype=np.int64)
    return SequentialResult(precision, recall, tps, fps, points, tp, fp, z_hat, categories)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a random evaluation instance.

    Each ground-truth box spawns a uniform number of jittered true
    detections in ``dets_per_gt``; each image additionally gets a
    Poisson(``false_det_rate``) number of random boxes with random labels.
    """

    seed: int = 0
    images: int = 10
    classes: int = 3
    gts_per_image: tuple[int, int] = (0, 5)
    dets_per_gt: tuple[int, int] = (0, 2)
    true_scores: tuple[float, float] = (0.3, 1.0)
    false_scores: tuple[float, float] = (0.0, 0.7)
    jitter: float = 3.0
    difficult_prob: float = 0.0
    discard_prob: float = 0.0
    false_det_rate: float = 1.0
    canvas: tuple[int, int] = (200, 200)
    box_size: tuple[int, int] = (4, 60)
    integer_coords: bool = True
    score_decimals: int | None = None

    def __post_init__(self) -> None:
        for name in ("difficult_prob", "discard_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {p}")
        for name in ("gts_per_image", "dets_per_gt", "box_size", "true_scores", "false_scores"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValidationError(f"{name}: max < min ({lo}, {hi})")
            if lo < 0:
                raise ValidationError(f"{name}: negative bound")
        for name in ("true_scores", "false_scores"):
            if getattr(self, name)[1] > 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.images < 0 or self.classes < 1:
            raise ValidationError("need images >= 0 and classes >= 1")
        if self.jitter < 0 or self.false_det_rate < 0:
            raise ValidationError("jitter and false_det_rate must be nonnegative")
        if self.box_size[0] < 1 or self.box_size[1] > min(self.canvas):
            raise ValidationError("box_size must lie within [1, canvas]")


def _random_box(rng: np.random.Generator, spec: SyntheticSpec) -> list[float]:
    w, h = rng.integers(spec.box_size[0], spec.box_size[1] + 1, size=2)
    x0 = rng.integers(0, spec.canvas[0] - w + 1)
    y0 = rng.integers(0, spec.canvas[1] - h + 1)
    return [float(x0), float(y0), float(x0 + w - 1), float(y0 + h - 1)]


def _jitter(rng: np.random.Generator, box: list[float], spec: SyntheticSpec) -> list[float]:
    if spec.jitter == 0:
        return list(box)
    c = np.asarray(box) + rng.normal(0.0, spec.jitter, size=4)
    if spec.integer_coords:
        c = np.round(c)
    c[[0, 2]] = np.clip(c[[0, 2]], 0, spec.canvas[0] - 1)
    c[[1, 3]] = np.clip(c[[1, 3]], 0, spec.canvas[1] - 1)
    x0, x1 = sorted((c[0], c[2]))
    y0, y1 = sorted((c[1], c[3]))
    return [float(x0), float(y0), float(x1), float(y1)]


def _score(rng: np.random.Generator, bounds: tuple[float, float], decimals: int | None) -> float:
    s = float(rng.uniform(*bounds))
    return round(s, decimals) if decimals is not None else s


def generate(spec: SyntheticSpec) -> Dataset:
    """Deterministic random dataset: the same SyntheticSpec always yields the same records."""
    rng = np.random.default_rng(spec.seed)
    gts, dets = [], []
    for i in range(spec.images):
        image_id = f"img{i:06d}"
        n_gt = int(rng.integers(spec.gts_per_image[0], spec.gts_per_image[1] + 1))
        boxes = [_random_box(rng, spec) for _ in range(n_gt)]
        labels = [int(v) for v in rng.integers(0, spec.classes, size=n_gt)]
        hard = [bool(v) for v in rng.random(n_gt) < spec.difficult_prob]
        gts.append(ImageGroundTruth(image_id, boxes, labels, hard))

        d_boxes, d_labels, d_scores = [], [], []
        for box, label in zip(boxes, labels):
            for _ in range(int(rng.integers(spec.dets_per_gt[0], spec.dets_per_gt[1] + 1))):
                d_boxes.append(_jitter(rng, box, spec))
                d_labels.append(label)
                d_scores.append(_score(rng, spec.true_scores, spec.score_decimals))
        for _ in range(int(rng.poisson(spec.false_det_rate))):
            d_boxes.append(_random_box(rng, spec))
            d_labels.append(int(rng.integers(0, spec.classes)))
            d_scores.append(_score(rng, spec.false_scores, spec.score_decimals))
        perm = rng.permutation(len(d_boxes))
        dropped = rng.random(len(d_boxes)) < spec.discard_prob
        dets.append(
            ImageDetections(
                image_id,
                [d_boxes[p] for p in perm],
                [d_labels[p] for p in perm],
                [d_scores[p] for p in perm],
                [bool(v) for v in dropped],
            )
        )
    return Dataset(tuple(gts), tuple(dets))
