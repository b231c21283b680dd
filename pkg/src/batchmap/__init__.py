"""Batched mean Average Precision for object detection.

The batched pipeline pads each mini-batch to fixed shapes and categorizes
every detection with array operations; :mod:`batchmap.oracle` holds the
classic sequential evaluator used as its reference.
"""
from .accumulator import compute_pr, extract, merge, new_accumulator
from .ap import ApReport, ap_recall_levels, ap_step, ap_step_everypoint, ap_trapezoid, compute_ap, map_over_thresholds
from .engine import RunReport, crosscheck, evaluate
from .ingest import Dataset, batch_iter, build_det_batch, count_easy_gt, load_dataset, pad_gt_batch, parse_detections, parse_ground_truth
from .matcher import categorize_above, categorize_below, filter_iou, pairwise_iou
from .model import (
    PAD_LABEL,
    Accumulator,
    Box,
    CategoryMatrix,
    DetBatch,
    EvalConfig,
    ImageDetections,
    ImageGroundTruth,
    PaddedGtBatch,
    PrCurves,
    ValidationError,
    validate_image_record,
)
from .oracle import SyntheticSpec, generate, sequential_evaluate

__version__ = "0.1.0"
