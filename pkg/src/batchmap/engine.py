"""End-to-end drivers: batched evaluation, cross-checking, PR export, benchmarking."""
from __future__ import annotations

import csv
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import accumulator as acc_ops
from .ap import ApReport, compute_ap, map_over_thresholds
from .ingest import Dataset, batch_iter, count_easy_gt
from .matcher import categorize, filter_iou, iou_matrix, pairwise_iou
from .model import FALSE_POSITIVE, IGNORED, TRUE_POSITIVE, Accumulator, EvalConfig, PrCurves
from .oracle import SequentialResult, SyntheticSpec, generate, sequential_evaluate

CODE_NAMES = {IGNORED: "ignored", FALSE_POSITIVE: "FP", TRUE_POSITIVE: "TP"}


@dataclass
class RunReport:
    """Result of one evaluation run.

    ``execution`` holds settings that must not change the metrics (batch
    size, worker count) and the stage timings; everything else is a pure
    function of the data and the evaluation config.
    """

    reports: list[ApReport]
    tp: list[list[int]]
    fp: list[list[int]]
    easy_gt_counts: list[int]
    overall_map: float
    config: dict
    execution: dict = field(default_factory=dict)
    curves: list[PrCurves] = field(default_factory=list, repr=False)

    def to_dict(self, include_execution: bool = True) -> dict:
        out = {
            "thresholds": [
                {
                    "iou_threshold": r.threshold,
                    "method": r.method,
                    "map": r.map_value,
                    "per_class_ap": list(r.per_class_ap),
                    "excluded_classes": list(r.excluded_classes),
                    "excluded_class_count": r.excluded_class_count,
                    "tp": tp,
                    "fp": fp,
                }
                for r, tp, fp in zip(self.reports, self.tp, self.fp)
            ],
            "overall_map": self.overall_map,
            "easy_gt_counts": self.easy_gt_counts,
            "config": self.config,
        }
        if include_execution:
            out["execution"] = self.execution
        return out


def config_echo(config: EvalConfig) -> dict:
    echo = asdict(config)
    for key in ("batch_size", "workers"):
        echo.pop(key)
    echo["iou_thresholds"] = list(config.iou_thresholds)
    echo["recall_levels"] = list(config.recall_levels)
    return echo


def _run_batches(batches, thresholds, easy, keep_codes: bool):
    accs = [acc_ops.new_accumulator(easy) for _ in thresholds]
    codes = []
    for det, gt in batches:
        iou = filter_iou(pairwise_iou(det, gt), det, gt)
        for a, t in zip(accs, thresholds):
            d = categorize(iou, det, gt, t)
            acc_ops.extract(a, d, det)
            if keep_codes:
                codes.append((t, det.image_index, d.values))
    return accs, codes


def accumulate(
    dataset: Dataset, config: EvalConfig, keep_codes: bool = False
) -> tuple[list[Accumulator], list]:
    """Run matching over all batches; one accumulator per IoU threshold.

    With ``config.workers > 1`` batches are dealt round-robin to a thread
    pool, each worker filling private accumulators that are merged at the
    end.  The global sort in ``compute_pr`` makes the merge order irrelevant.
    """
    easy = count_easy_gt(dataset, config.k)
    thresholds = config.iou_thresholds
    if config.workers == 1:
        accs, codes = _run_batches(batch_iter(dataset, config), thresholds, easy, keep_codes)
        return accs, codes
    batches = list(batch_iter(dataset, config))
    shards = [batches[w:: config.workers] for w in range(config.workers)]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda s: _run_batches(s, thresholds, easy, keep_codes), shards))
    accs = [acc_ops.new_accumulator(easy) for _ in thresholds]
    codes = []
    for shard_accs, shard_codes in results:
        accs = [acc_ops.merge(a, b) for a, b in zip(accs, shard_accs)]
        codes.extend(shard_codes)
    return accs, codes


def evaluate(dataset: Dataset, config: EvalConfig) -> RunReport:
    return _evaluate(dataset, config, keep_codes=False)[0]


def _evaluate(dataset: Dataset, config: EvalConfig, keep_codes: bool) -> tuple[RunReport, list]:
    timing = {}
    start = time.perf_counter()
    accs, codes = accumulate(dataset, config, keep_codes)
    timing["match"] = time.perf_counter() - start

    mark = time.perf_counter()
    curves = [acc_ops.compute_pr(a, config.k, config.epsilon) for a in accs]
    timing["pr"] = time.perf_counter() - mark

    mark = time.perf_counter()
    reports = [
        compute_ap(pr, config.ap_method, config.recall_levels, t)
        for pr, t in zip(curves, config.iou_thresholds)
    ]
    timing["ap"] = time.perf_counter() - mark
    timing["total"] = time.perf_counter() - start

    totals = [acc_ops.class_totals(pr) for pr in curves]
    run = RunReport(
        reports=reports,
        tp=[tp.tolist() for tp, _ in totals],
        fp=[fp.tolist() for _, fp in totals],
        easy_gt_counts=count_easy_gt(dataset, config.k).tolist(),
        overall_map=map_over_thresholds(reports),
        config=config_echo(config),
        execution={"batch_size": config.batch_size, "workers": config.workers, "timing_s": timing},
        curves=curves,
    )
    return run, codes


def _codes_by_image(dataset: Dataset, codes: list, t: float) -> list[np.ndarray]:
    out = [np.zeros(len(d), dtype=np.int8) for d in dataset.detections]
    for t_batch, image_index, values in codes:
        if t_batch != t:
            continue
        for row, i in enumerate(image_index):
            out[i] = values[row, : len(out[i])].copy()
    return out


def parallel_categories(dataset: Dataset, config: EvalConfig, t: float) -> list[np.ndarray]:
    """Per-image detection codes from the batched path, in file order."""
    single = EvalConfig(**{**asdict(config), "iou_thresholds": (t,)})
    _, codes = accumulate(dataset, single, keep_codes=True)
    return _codes_by_image(dataset, codes, t)


def sequential_curves(result: SequentialResult, epsilon: float = 1e-9) -> PrCurves:
    return acc_ops.curves_from_counts(result.tp_flags, result.fp_flags, result.easy_gt_counts, epsilon)


# -- cross-check -------------------------------------------------------------

DIRECT = "difficult-overlap"
KNOCK_ON = "claimed-by-difficult-overlap"
UNEXPLAINED = "unexplained"


def _match_targets(dataset: Dataset, i: int, j: int, t: float):
    """Best-match targets of detection ``j`` in image ``i`` under both rule sets.

    Returns ``(direct, easy_target)``: ``direct`` is true when the highest-IoU
    same-class box (first on ties) is difficult while some easy box of the
    class also clears ``t``; ``easy_target`` is the index of the best easy
    box above ``t`` or ``None``.
    """
    gt, det = dataset.ground_truth[i], dataset.detections[i]
    label = det.labels[j]
    same = [g for g, lab in enumerate(gt.labels) if lab == label]
    if not same:
        return False, None
    boxes = np.asarray([gt.boxes[g] for g in same], dtype=np.float64)
    iou = iou_matrix(np.asarray(det.boxes[j], dtype=np.float64)[None], boxes)[0]
    hard = np.array([gt.difficult[g] for g in same])
    easy_iou = np.where(hard, 0.0, iou)
    easy_target = same[int(np.argmax(easy_iou))] if easy_iou.max() > t else None
    best = int(np.argmax(iou))
    direct = bool(iou[best] > t and hard[best] and easy_target is not None)
    return direct, easy_target


def explain_differences(
    dataset: Dataset, parallel: list[np.ndarray], sequential: list[np.ndarray], t: float
) -> list[dict]:
    """List every detection whose code differs between the two paths.

    The sequential rule ignores a detection whose single best box is
    difficult; the batched rule drops difficult boxes first and matches the
    detection against the best easy box instead.  A difference is
    ``difficult-overlap`` when the detection itself falls in that case, and
    ``claimed-by-difficult-overlap`` when a higher-ranked detection of the
    same image and class fell in that case and took this detection's easy
    target in the batched path.  Anything else is ``unexplained``.
    """
    out = []
    for i, (p_codes, s_codes) in enumerate(zip(parallel, sequential)):
        diff = np.nonzero(p_codes != s_codes)[0]
        if len(diff) == 0:
            continue
        det = dataset.detections[i]
        rank = sorted(range(len(det)), key=lambda j: (-det.scores[j], j))
        targets = {j: _match_targets(dataset, i, j, t) for j in range(len(det)) if not det.discarded[j]}
        for j in diff:
            j = int(j)
            direct, target = targets.get(j, (False, None))
            note, culprit = UNEXPLAINED, None
            if direct:
                note = DIRECT
            elif target is not None:
                for r in rank[: rank.index(j)]:
                    r_direct, r_target = targets.get(r, (False, None))
                    if (
                        r_direct
                        and r_target == target
                        and det.labels[r] == det.labels[j]
                        and p_codes[r] == TRUE_POSITIVE
                    ):
                        note, culprit = KNOCK_ON, r
                        break
            out.append(
                {
                    "image_id": det.image_id,
                    "image_index": i,
                    "detection": j,
                    "class": det.labels[j],
                    "score": det.scores[j],
                    "parallel": CODE_NAMES[int(p_codes[j])],
                    "sequential": CODE_NAMES[int(s_codes[j])],
                    "annotation": note,
                    "caused_by_detection": culprit,
                }
            )
    return out


def _pct(a: int, b: int) -> float | None:
    if b == 0:
        return 0.0 if a == 0 else None
    return abs(a - b) / b * 100.0


def crosscheck(dataset: Dataset, config: EvalConfig, t: float) -> dict:
    """Compare the batched and sequential paths at one IoU threshold."""
    single = EvalConfig(**{**asdict(config), "iou_thresholds": (t,)})
    run, codes = _evaluate(dataset, single, keep_codes=True)
    p_codes = _codes_by_image(dataset, codes, t)
    seq = sequential_evaluate(dataset, t, config.k, config.epsilon)
    seq_report = compute_ap(sequential_curves(seq, config.epsilon), config.ap_method, config.recall_levels, t)
    differences = explain_differences(dataset, p_codes, seq.categories, t)

    rows = []
    for c in range(config.k):
        tp_p, tp_s = run.tp[0][c], int(seq.tp[c])
        fp_p, fp_s = run.fp[0][c], int(seq.fp[c])
        rows.append(
            {
                "class": c,
                "tp_parallel": tp_p,
                "tp_sequential": tp_s,
                "tp_delta_pct": _pct(tp_p, tp_s),
                "fp_parallel": fp_p,
                "fp_sequential": fp_s,
                "fp_delta_pct": _pct(fp_p, fp_s),
            }
        )
    counts = {name: 0 for name in (DIRECT, KNOCK_ON, UNEXPLAINED)}
    for d in differences:
        counts[d["annotation"]] += 1
    return {
        "iou_threshold": t,
        "method": config.ap_method,
        "map_parallel": run.reports[0].map_value,
        "map_sequential": seq_report.map_value,
        "classes": rows,
        "differences": differences,
        "annotation_counts": counts,
        "all_explained": counts[UNEXPLAINED] == 0,
    }


# -- PR export ---------------------------------------------------------------

def export_pr(pr: PrCurves, out_dir: str, with_dummy: bool) -> list[str]:
    """Write one ``class_<c>.csv`` with ``recall,precision`` rows per class."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for c in range(pr.k):
        precision, recall = pr.class_curve(c)
        path = os.path.join(out_dir, f"class_{c}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["recall", "precision"])
            if with_dummy and len(precision):
                writer.writerow([0.0, 1.0])
            for q, p in zip(recall, precision):
                writer.writerow([repr(float(q)), repr(float(p))])
        paths.append(path)
    return paths


def export_run(run: RunReport, out_dir: str) -> list[str]:
    """Export every threshold's curves; subdirectories only when there are several."""
    with_dummy = run.config["ap_method"] == "trapezoid"
    if len(run.curves) == 1:
        return export_pr(run.curves[0], out_dir, with_dummy)
    paths = []
    for pr, t in zip(run.curves, run.config["iou_thresholds"]):
        paths += export_pr(pr, os.path.join(out_dir, f"iou_{t:g}"), with_dummy)
    return paths


# -- benchmark ---------------------------------------------------------------

def bench(spec: SyntheticSpec, config: EvalConfig, repeat: int = 3) -> dict:
    """Median wall time of the sequential and batched paths on a generated workload."""
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    dataset = generate(spec)
    seq_times, par_times = [], []
    for _ in range(repeat):
        start = time.perf_counter()
        for t in config.iou_thresholds:
            sequential_evaluate(dataset, t, config.k, config.epsilon)
        seq_times.append(time.perf_counter() - start)
        start = time.perf_counter()
        evaluate(dataset, config)
        par_times.append(time.perf_counter() - start)
    seq_med, par_med = statistics.median(seq_times), statistics.median(par_times)
    return {
        "images": len(dataset),
        "detections": sum(len(d) for d in dataset.detections),
        "ground_truth": sum(len(g) for g in dataset.ground_truth),
        "repeat": repeat,
        "seed": spec.seed,
        "batch_size": config.batch_size,
        "workers": config.workers,
        "sequential_s": seq_times,
        "parallel_s": par_times,
        "sequential_median_s": seq_med,
        "parallel_median_s": par_med,
        "speedup": seq_med / par_med if par_med > 0 else float("inf"),
    }


def summarize(run: RunReport) -> str:
    lines = []
    for r, tp, fp in zip(run.reports, run.tp, run.fp):
        lines.append(f"IoU>{r.threshold:g} [{r.method}] mAP={r.map_value:.4f} TP={sum(tp)} FP={sum(fp)}")
        for c, ap in enumerate(r.per_class_ap):
            shown = "excluded (no easy GT)" if ap is None else f"{ap:.4f}"
            lines.append(f"  class {c}: AP={shown}")
    lines.append(f"overall mAP={run.overall_map:.4f}")
    return "\n".join(lines)

