"""Interchange-file parsing and fixed-shape batch assembly.

Files are line-delimited JSON, one image per line::

    {"image_id": "a", "boxes": [[0, 0, 9, 9]], "labels": [0], "difficult": [false]}
    {"image_id": "a", "boxes": [[0, 0, 9, 9]], "labels": [0], "scores": [0.9]}

The second form (detections) accepts an optional ``discarded`` list.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np

from .model import (
    PAD_LABEL,
    DetBatch,
    EvalConfig,
    ImageDetections,
    ImageGroundTruth,
    PaddedGtBatch,
    ValidationError,
    validate_image_record,
)

Source = Union[str, bytes, IO[str], IO[bytes]]

_GT_FIELDS = {"image_id", "boxes", "labels", "difficult"}
_DET_FIELDS = {"image_id", "boxes", "labels", "scores", "discarded"}


class ParseError(ValidationError):
    """A malformed or invalid line in an interchange file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _lines(source: Source) -> Iterator[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    for raw in source:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        yield raw


def _parse(source: Source, build, fields: set, required: set) -> list:
    records = []
    seen: set[str] = set()
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(lineno, "record is not an object")
        missing = required - obj.keys()
        if missing:
            raise ParseError(lineno, f"missing field(s) {sorted(missing)}")
        unknown = obj.keys() - fields
        if unknown:
            raise ParseError(lineno, f"unknown field(s) {sorted(unknown)}")
        try:
            record = validate_image_record(build(obj))
        except (ValidationError, TypeError, ValueError) as exc:
            raise ParseError(lineno, str(exc)) from None
        if record.image_id in seen:
            raise ParseError(lineno, f"duplicate image_id {record.image_id!r}")
        seen.add(record.image_id)
        records.append(record)
    return records


def _check_types(obj: dict, list_fields: Sequence[str]) -> None:
    if not isinstance(obj["image_id"], str):
        raise ValidationError("image_id must be a string")
    for name in list_fields:
        if name in obj and not isinstance(obj[name], list):
            raise ValidationError(f"{name} must be a list")
    for box in obj["boxes"]:
        if not isinstance(box, list) or len(box) != 4:
            raise ValidationError("each box must be a list of 4 numbers")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in box):
            raise ValidationError("box coordinates must be numbers")
    for label in obj["labels"]:
        if isinstance(label, bool) or not isinstance(label, int):
            raise ValidationError("labels must be integers")
    for name in ("difficult", "discarded"):
        if name in obj and any(not isinstance(v, bool) for v in obj[name]):
            raise ValidationError(f"{name} must hold booleans")


def _build_gt(obj: dict) -> ImageGroundTruth:
    _check_types(obj, ("boxes", "labels", "difficult"))
    return ImageGroundTruth(obj["image_id"], obj["boxes"], obj["labels"], obj["difficult"])


def _build_det(obj: dict) -> ImageDetections:
    _check_types(obj, ("boxes", "labels", "scores", "discarded"))
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in obj["scores"]):
        raise ValidationError("scores must be numbers")
    discarded = obj.get("discarded")
    if discarded is None:
        discarded = [False] * len(obj["boxes"])
    return ImageDetections(obj["image_id"], obj["boxes"], obj["labels"], obj["scores"], discarded)


def parse_ground_truth(source: Source) -> list[ImageGroundTruth]:
    return _parse(source, _build_gt, _GT_FIELDS, _GT_FIELDS)


def parse_detections(source: Source) -> list[ImageDetections]:
    return _parse(source, _build_det, _DET_FIELDS, _DET_FIELDS - {"discarded"})


def _num(v: float):
    return int(v) if float(v).is_integer() else v


def dump_record(record: ImageGroundTruth | ImageDetections) -> str:
    """Serialize one record as a single interchange line (no newline)."""
    obj = {
        "image_id": record.image_id,
        "boxes": [[_num(v) for v in b] for b in record.boxes],
        "labels": list(record.labels),
    }
    if isinstance(record, ImageGroundTruth):
        obj["difficult"] = list(record.difficult)
    else:
        obj["scores"] = list(record.scores)
        obj["discarded"] = list(record.discarded)
    return json.dumps(obj, separators=(",", ":"))


def dump_records(records: Iterable[ImageGroundTruth | ImageDetections]) -> str:
    return "".join(dump_record(r) + "\n" for r in records)


@dataclass(frozen=True)
class Dataset:
    """Ground truth and detections aligned by image.

    ``detections[i]`` belongs to ``ground_truth[i]``; images absent from the
    detection file get an empty record.
    """

    ground_truth: tuple[ImageGroundTruth, ...]
    detections: tuple[ImageDetections, ...]

    def __len__(self) -> int:
        return len(self.ground_truth)

    @classmethod
    def from_records(
        cls, ground_truth: Sequence[ImageGroundTruth], detections: Sequence[ImageDetections]
    ) -> "Dataset":
        index = {}
        for i, gt in enumerate(ground_truth):
            if gt.image_id in index:
                raise ValidationError(f"duplicate ground-truth image_id {gt.image_id!r}")
            index[gt.image_id] = i
        aligned: list[ImageDetections | None] = [None] * len(ground_truth)
        for det in detections:
            i = index.get(det.image_id)
            if i is None:
                raise ValidationError(f"detections for unknown image {det.image_id!r}")
            if aligned[i] is not None:
                raise ValidationError(f"duplicate detections for image {det.image_id!r}")
            aligned[i] = det
        filled = tuple(
            d if d is not None else ImageDetections(gt.image_id, (), (), (), ())
            for gt, d in zip(ground_truth, aligned)
        )
        return cls(tuple(ground_truth), filled)

    def max_label(self) -> int:
        """Largest class label present in either side, or -1 if none."""
        labels = [max(r.labels) for r in (*self.ground_truth, *self.detections) if r.labels]
        return max(labels, default=-1)

    def validate(self, k: int) -> None:
        for r in (*self.ground_truth, *self.detections):
            validate_image_record(r, k)


def load_dataset(gt_source: Source, det_source: Source) -> Dataset:
    return Dataset.from_records(parse_ground_truth(gt_source), parse_detections(det_source))


def pad_gt_batch(
    images: Sequence[ImageGroundTruth], m_hat: int, k: int, image_index: Sequence[int] | None = None
) -> PaddedGtBatch:
    n = len(images)
    coords = np.zeros((n, m_hat, 4), dtype=np.float64)
    labels = np.full((n, m_hat), PAD_LABEL, dtype=np.int64)
    ignore = np.ones((n, m_hat), dtype=bool)
    for i, img in enumerate(images):
        j = len(img)
        if j > m_hat:
            raise ValidationError(f"image {img.image_id!r} has {j} ground-truth boxes, more than {m_hat}")
        if j == 0:
            continue
        if max(img.labels) >= k:
            raise ValidationError(f"label {max(img.labels)} out of range [0, {k})")
        coords[i, :j] = img.boxes
        labels[i, :j] = img.labels
        ignore[i, :j] = img.difficult
    idx = np.arange(n) if image_index is None else np.asarray(image_index, dtype=np.int64)
    return PaddedGtBatch(coords, labels, ignore, idx)


def build_det_batch(
    images: Sequence[ImageDetections], m: int, image_index: Sequence[int] | None = None
) -> DetBatch:
    n = len(images)
    coords = np.zeros((n, m, 4), dtype=np.float64)
    labels = np.zeros((n, m), dtype=np.int64)
    scores = np.zeros((n, m), dtype=np.float64)
    discard = np.ones((n, m), dtype=bool)
    for i, img in enumerate(images):
        j = len(img)
        if j > m:
            raise ValidationError(f"image {img.image_id!r} has {j} detections, more than {m}")
        if j == 0:
            continue
        coords[i, :j] = img.boxes
        labels[i, :j] = img.labels
        scores[i, :j] = img.scores
        discard[i, :j] = img.discarded
    idx = np.arange(n) if image_index is None else np.asarray(image_index, dtype=np.int64)
    return DetBatch(coords, labels, scores, discard, idx)


def count_easy_gt(dataset: Dataset, k: int) -> np.ndarray:
    counts = np.zeros(k, dtype=np.int64)
    for gt in dataset.ground_truth:
        for label, hard in zip(gt.labels, gt.difficult):
            if not hard:
                if label >= k:
                    raise ValidationError(f"label {label} out of range [0, {k})")
                counts[label] += 1
    return counts


def batch_iter(dataset: Dataset, config: EvalConfig) -> Iterator[tuple[DetBatch, PaddedGtBatch]]:
    """Yield ``ceil(g / n)`` batch pairs in image order.

    Slot counts default to the batch maximum (at least 1, so every array
    keeps a nonempty trailing axis); the config can pin them instead.
    """
    n = config.batch_size
    for start in range(0, len(dataset), n):
        gts = dataset.ground_truth[start:start + n]
        dets = dataset.detections[start:start + n]
        m_hat = max(len(g) for g in gts)
        if config.max_gts_per_image is not None:
            _check_cap(gts, config.max_gts_per_image, "ground-truth boxes")
            m_hat = config.max_gts_per_image
        m = max(len(d) for d in dets)
        if config.max_dets_per_image is not None:
            _check_cap(dets, config.max_dets_per_image, "detections")
            m = config.max_dets_per_image
        m_hat, m = max(1, m_hat), max(1, m)
        index = range(start, start + len(gts))
        yield build_det_batch(dets, m, index), pad_gt_batch(gts, m_hat, config.k, index)


def _check_cap(records: Sequence, cap: int, what: str) -> None:
    for r in records:
        if len(r) > cap:
            raise ValidationError(f"image {r.image_id!r} has {len(r)} {what}, more than {cap}")
