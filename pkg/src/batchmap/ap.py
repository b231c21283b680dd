"""Average precision from PR curves.

Three integrators are offered:

``trapezoid``
    exact area under the curve, with a ``(recall 0, precision 1)`` point in
    front; computed for all classes at once.
``recall-levels``
    mean of the interpolated precision at fixed recall levels; all classes
    at once.
``step``
    the flattened step curve (precision made non-increasing from the right);
    per class, over that class's own points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DEFAULT_RECALL_LEVELS, PrCurves, ValidationError


@dataclass(frozen=True)
class ApReport:
    per_class_ap: tuple  # float, or None for classes without easy ground truth
    map_value: float
    method: str
    threshold: float | None = None

    @property
    def excluded_classes(self) -> tuple[int, ...]:
        return tuple(c for c, ap in enumerate(self.per_class_ap) if ap is None)

    @property
    def excluded_class_count(self) -> int:
        return len(self.excluded_classes)


def _report(values: np.ndarray, pr: PrCurves, method: str, threshold: float | None) -> ApReport:
    included = pr.easy_gt_counts > 0
    per_class = tuple(float(v) if inc else None for v, inc in zip(values, included))
    map_value = float(values[included].mean()) if included.any() else 0.0
    return ApReport(per_class, map_value, method, threshold)


def trapezoid_values(pr: PrCurves) -> np.ndarray:
    """Per-class trapezoidal area, vectorized over classes.

    Columns before a class's first detection hold precision 0 (nothing
    counted yet); they are lifted to the leading precision 1 so the
    integrand starts from the prepended point instead of dropping to 0.
    """
    k = pr.k
    started = (pr.tp_cum + pr.fp_cum) > 0
    p = np.where(started, pr.precision, 1.0)
    p = np.concatenate((np.ones((k, 1)), p), axis=1)
    q = np.concatenate((np.zeros((k, 1)), pr.recall), axis=1)
    return np.sum((p[:, 1:] + p[:, :-1]) * (q[:, 1:] - q[:, :-1]) / 2, axis=1)


def ap_trapezoid(pr: PrCurves, threshold: float | None = None) -> ApReport:
    return _report(trapezoid_values(pr), pr, "trapezoid", threshold)


def recall_level_values(pr: PrCurves, levels: Sequence[float] = DEFAULT_RECALL_LEVELS) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64)
    if levels.size == 0:
        raise ValidationError("recall levels must be nonempty")
    if pr.precision.shape[1] == 0:
        return np.zeros(pr.k)
    # one (k, z) slab per level keeps memory at O(k * z)
    best = np.stack([np.max(pr.precision * (pr.recall >= r), axis=1) for r in levels], axis=1)
    return best.mean(axis=1)


def ap_recall_levels(
    pr: PrCurves, levels: Sequence[float] = DEFAULT_RECALL_LEVELS, threshold: float | None = None
) -> ApReport:
    return _report(recall_level_values(pr, levels), pr, "recall-levels", threshold)


def ap_step_everypoint(precision: Sequence[float], recall: Sequence[float]) -> float:
    """Area under the flattened step curve of one class."""
    p = np.concatenate(([0.0], np.asarray(precision, dtype=np.float64), [0.0]))
    q = np.concatenate(([0.0], np.asarray(recall, dtype=np.float64), [1.0]))
    # running max from the right; p[0] is never read below
    p[1:] = np.maximum.accumulate(p[1:][::-1])[::-1]
    j = np.nonzero(q[1:] != q[:-1])[0]
    return float(np.sum(p[j + 1] * (q[j + 1] - q[j])))


def ap_step(pr: PrCurves, threshold: float | None = None) -> ApReport:
    values = np.array([ap_step_everypoint(*pr.class_curve(c)) for c in range(pr.k)])
    return _report(values, pr, "step", threshold)


def compute_ap(
    pr: PrCurves,
    method: str = "trapezoid",
    recall_levels: Sequence[float] = DEFAULT_RECALL_LEVELS,
    threshold: float | None = None,
) -> ApReport:
    if method == "trapezoid":
        return ap_trapezoid(pr, threshold)
    if method == "step":
        return ap_step(pr, threshold)
    if method == "recall-levels":
        return ap_recall_levels(pr, recall_levels, threshold)
    raise ValidationError(f"unknown AP method {method!r}")


def map_over_thresholds(reports: Sequence[ApReport]) -> float:
    """Arithmetic mean of the per-threshold mAP values."""
    if not reports:
        raise ValidationError("no reports to average")
    methods = {r.method for r in reports}
    if len(methods) > 1:
        raise ValidationError(f"reports mix AP methods {sorted(methods)}")
    if len({len(r.per_class_ap) for r in reports}) > 1:
        raise ValidationError("reports cover different class sets")
    return float(np.mean([r.map_value for r in reports]))
