"""Domain types shared by every stage of the evaluator.

Records coming from files are small immutable values (``Box``,
``ImageGroundTruth``, ``ImageDetections``).  Batches are fixed-shape numpy
arrays produced by :mod:`batchmap.ingest` and consumed by the matcher.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

#: Label stored in padded ground-truth slots.  Never equal to a class index.
PAD_LABEL = -1

IGNORED, FALSE_POSITIVE, TRUE_POSITIVE = 0, 1, 2

AP_METHODS = ("trapezoid", "step", "recall-levels")
DEFAULT_RECALL_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))


class ValidationError(ValueError):
    """Raised when a record or configuration violates an invariant."""


class _BoxFields(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float


class Box(_BoxFields):
    """Axis-aligned box in inclusive pixel coordinates.

    Both corners belong to the box, so a box spanning ``0..9`` is ten
    pixels wide.
    """

    __slots__ = ()

    def __new__(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "Box":
        coords = tuple(float(v) for v in (xmin, ymin, xmax, ymax))
        if not all(math.isfinite(v) for v in coords):
            raise ValidationError(f"non-finite box coordinate in {coords}")
        if coords[2] < coords[0]:
            raise ValidationError(f"xmax < xmin in box {coords}")
        if coords[3] < coords[1]:
            raise ValidationError(f"ymax < ymin in box {coords}")
        return super().__new__(cls, *coords)

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin + 1) * (self.ymax - self.ymin + 1)


def _as_boxes(boxes: Sequence) -> tuple[Box, ...]:
    return tuple(b if isinstance(b, Box) else Box(*b) for b in boxes)


def _check_labels(labels: Sequence[int], k: int | None) -> None:
    for label in labels:
        if label < 0 or (k is not None and label >= k):
            bound = f"[0, {k})" if k is not None else ">= 0"
            raise ValidationError(f"label {label} out of range {bound}")


@dataclass(frozen=True)
class ImageGroundTruth:
    image_id: str
    boxes: tuple[Box, ...]
    labels: tuple[int, ...]
    difficult: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", _as_boxes(self.boxes))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        object.__setattr__(self, "difficult", tuple(bool(v) for v in self.difficult))
        if not (len(self.boxes) == len(self.labels) == len(self.difficult)):
            raise ValidationError(
                f"mismatched list lengths for image {self.image_id!r}: boxes={len(self.boxes)}, "
                f"labels={len(self.labels)}, difficult={len(self.difficult)}"
            )
        _check_labels(self.labels, None)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class ImageDetections:
    image_id: str
    boxes: tuple[Box, ...]
    labels: tuple[int, ...]
    scores: tuple[float, ...]
    discarded: tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", _as_boxes(self.boxes))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        object.__setattr__(self, "scores", tuple(float(v) for v in self.scores))
        discarded = tuple(bool(v) for v in self.discarded)
        if not discarded and self.boxes:
            discarded = (False,) * len(self.boxes)
        object.__setattr__(self, "discarded", discarded)
        n = len(self.boxes)
        if not (len(self.labels) == len(self.scores) == len(self.discarded) == n):
            raise ValidationError(
                f"mismatched list lengths for image {self.image_id!r}: boxes={n}, "
                f"labels={len(self.labels)}, scores={len(self.scores)}, discarded={len(self.discarded)}"
            )
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValidationError(f"score out of range [0, 1]: {s}")
        _check_labels(self.labels, None)

    def __len__(self) -> int:
        return len(self.boxes)


Record = Union[ImageGroundTruth, ImageDetections]


def validate_image_record(record: Record, k: int | None = None) -> Record:
    """Return ``record`` unchanged if it satisfies every invariant.

    Construction already enforces list lengths, box geometry and score
    bounds; this re-checks them (records can be built with ``object.__new__``
    tricks or mutated through ``dataclasses.replace``) and, when ``k`` is
    known, checks that every label is a valid class index.
    """
    if isinstance(record, ImageGroundTruth):
        lengths = {len(record.boxes), len(record.labels), len(record.difficult)}
    elif isinstance(record, ImageDetections):
        lengths = {len(record.boxes), len(record.labels), len(record.scores), len(record.discarded)}
        for s in record.scores:
            if not (0.0 <= s <= 1.0):
                raise ValidationError(f"score out of range [0, 1]: {s}")
    else:
        raise TypeError(f"not an image record: {type(record).__name__}")
    if len(lengths) != 1:
        raise ValidationError(f"mismatched list lengths for image {record.image_id!r}")
    for b in record.boxes:
        Box(*b)
    _check_labels(record.labels, k)
    return record


@dataclass(frozen=True)
class PaddedGtBatch:
    """Ground truth for ``n`` images padded to ``m_hat`` slots each.

    ``ignore_mask`` is true for padded slots and for difficult boxes.
    ``image_index`` holds each row's position in the dataset.
    """

    coords: np.ndarray  # (n, m_hat, 4)
    labels: np.ndarray  # (n, m_hat)
    ignore_mask: np.ndarray  # (n, m_hat) bool
    image_index: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def m_hat(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class DetBatch:
    """Detections for ``n`` images padded to ``m`` slots each.

    ``discard_mask`` is true for detections removed by post-processing and
    for padded slots.
    """

    coords: np.ndarray  # (n, m, 4)
    labels: np.ndarray  # (n, m)
    scores: np.ndarray  # (n, m)
    discard_mask: np.ndarray  # (n, m) bool
    image_index: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def m(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class CategoryMatrix:
    """Per-detection codes: 0 ignored, 1 false positive, 2 true positive."""

    values: np.ndarray  # (n, m) int8


@dataclass(frozen=True)
class EvalConfig:
    k: int
    iou_thresholds: tuple[float, ...] = (0.5,)
    ap_method: str = "trapezoid"
    recall_levels: tuple[float, ...] = DEFAULT_RECALL_LEVELS
    epsilon: float = 1e-9
    max_dets_per_image: int | None = None
    max_gts_per_image: int | None = None
    batch_size: int = 32
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        object.__setattr__(self, "recall_levels", tuple(float(r) for r in self.recall_levels))
        if self.k < 1:
            raise ValidationError(f"class count must be >= 1, got {self.k}")
        if not self.iou_thresholds:
            raise ValidationError("at least one IoU threshold is required")
        for t in self.iou_thresholds:
            if not (0.0 < t < 1.0):
                raise ValidationError(f"IoU threshold {t} outside (0, 1)")
        if self.ap_method not in AP_METHODS:
            raise ValidationError(f"unknown AP method {self.ap_method!r}; expected one of {AP_METHODS}")
        levels = self.recall_levels
        if not levels:
            raise ValidationError("recall levels must be nonempty")
        if any(r < 0.0 or r > 1.0 for r in levels) or list(levels) != sorted(levels):
            raise ValidationError("recall levels must be sorted ascending within [0, 1]")
        if not (self.epsilon > 0.0):
            raise ValidationError("epsilon must be positive")
        for name in ("max_dets_per_image", "max_gts_per_image"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")


@dataclass
class Accumulator:
    """Store of non-ignored detections gathered across batches.

    Chunks are kept as a list of arrays and concatenated lazily.  Besides
    label, score and TP flag each entry records its image and detection
    index, which make the global score ordering total.
    """

    easy_gt_counts: np.ndarray
    _labels: list = field(default_factory=list, repr=False)
    _scores: list = field(default_factory=list, repr=False)
    _tp_flags: list = field(default_factory=list, repr=False)
    _image_index: list = field(default_factory=list, repr=False)
    _det_index: list = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.easy_gt_counts = np.asarray(self.easy_gt_counts, dtype=np.int64)
        if self.easy_gt_counts.ndim != 1 or (self.easy_gt_counts < 0).any():
            raise ValidationError("easy GT counts must be a nonnegative vector")

    @property
    def k(self) -> int:
        return len(self.easy_gt_counts)

    def append(self, labels, scores, tp_flags, image_index, det_index) -> None:
        arrays = [np.asarray(a) for a in (labels, scores, tp_flags, image_index, det_index)]
        if len({a.shape[0] for a in arrays}) != 1:
            raise ValidationError("accumulator chunks must have equal length")
        if arrays[0].shape[0] == 0:
            return
        self._labels.append(arrays[0].astype(np.int64, copy=False))
        self._scores.append(arrays[1].astype(np.float64, copy=False))
        self._tp_flags.append(arrays[2].astype(bool, copy=False))
        self._image_index.append(arrays[3].astype(np.int64, copy=False))
        self._det_index.append(arrays[4].astype(np.int64, copy=False))

    @staticmethod
    def _cat(chunks: list, dtype) -> np.ndarray:
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=dtype)

    @property
    def labels(self) -> np.ndarray:
        return self._cat(self._labels, np.int64)

    @property
    def scores(self) -> np.ndarray:
        return self._cat(self._scores, np.float64)

    @property
    def tp_flags(self) -> np.ndarray:
        return self._cat(self._tp_flags, bool)

    @property
    def image_index(self) -> np.ndarray:
        return self._cat(self._image_index, np.int64)

    @property
    def det_index(self) -> np.ndarray:
        return self._cat(self._det_index, np.int64)

    def __len__(self) -> int:
        return sum(len(c) for c in self._labels)


@dataclass(frozen=True)
class PrCurves:
    """Per-class precision/recall over the globally score-sorted detections.

    Rows are classes, columns are non-ignored detections of every class in
    descending score order.  A column belonging to another class repeats the
    previous value of the row.  ``tp_cum``/``fp_cum`` keep the integer
    cumulative counts so that a class's own columns can be recovered.
    """

    precision: np.ndarray  # (k, z)
    recall: np.ndarray  # (k, z)
    easy_gt_counts: np.ndarray  # (k,)
    tp_cum: np.ndarray  # (k, z)
    fp_cum: np.ndarray  # (k, z)

    @property
    def k(self) -> int:
        return self.precision.shape[0]

    def own_columns(self, c: int) -> np.ndarray:
        """Boolean mask of the columns holding class ``c``'s detections."""
        count = self.tp_cum[c] + self.fp_cum[c]
        return np.diff(count, prepend=0) > 0

    def class_curve(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        cols = self.own_columns(c)
        return self.precision[c, cols], self.recall[c, cols]
