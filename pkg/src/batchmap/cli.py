"""Command-line entry point.

Exit codes: 0 success, 1 input parse/validation error, 2 configuration error.
Machine-readable JSON goes to stdout (or ``--output``); a short human
summary goes to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from . import engine
from .ingest import Dataset, load_dataset
from .model import AP_METHODS, EvalConfig, ValidationError
from .oracle import SyntheticSpec

EXIT_INPUT, EXIT_CONFIG = 1, 2


class ConfigError(Exception):
    pass


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"not a comma-separated list of numbers: {text!r}") from None


def parse_recall_levels(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive of ``stop``) or a comma-separated list."""
    if ":" not in text:
        return parse_float_list(text)
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"recall levels must be start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"bad recall level range {text!r}")
    count = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 12) for i in range(count))


def _add_eval_flags(p: argparse.ArgumentParser, need_files: bool = True) -> None:
    if need_files:
        p.add_argument("--gt", required=True, metavar="PATH", help="ground-truth file")
        p.add_argument("--det", required=True, metavar="PATH", help="detections file")
    p.add_argument("--iou-thresholds", default="0.5", metavar="LIST")
    p.add_argument("--ap-method", default="trapezoid", choices=AP_METHODS)
    p.add_argument("--recall-levels", default="0:1:0.1", metavar="SPEC")
    p.add_argument("--batch-size", type=int, default=32, metavar="N")
    p.add_argument("--classes", type=int, default=None, metavar="K")
    p.add_argument("--epsilon", type=float, default=1e-9, metavar="X")
    p.add_argument("--workers", type=int, default=1, metavar="N")
    p.add_argument("--output", default=None, metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchmap", description="Batched mean Average Precision evaluator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    _add_eval_flags(p)
    p.add_argument("--export-pr", default=None, metavar="DIR", help="also write per-class PR curves")

    p = sub.add_parser("crosscheck", help="compare batched and sequential evaluators")
    _add_eval_flags(p)

    p = sub.add_parser("export-pr", help="write per-class PR curve files")
    _add_eval_flags(p)
    p.add_argument("--export-pr", "--out-dir", dest="export_pr", required=True, metavar="DIR")

    p = sub.add_parser("bench", help="time sequential vs batched evaluation on a synthetic workload")
    _add_eval_flags(p, need_files=False)
    p.add_argument("--images", type=int, default=1000)
    p.add_argument("--gts-per-image", default="1,6", metavar="MIN,MAX")
    p.add_argument("--dets-per-gt", default="1,3", metavar="MIN,MAX")
    p.add_argument("--false-rate", type=float, default=3.0, help="mean false detections per image")
    p.add_argument("--jitter", type=float, default=3.0)
    p.add_argument("--difficult-prob", type=float, default=0.0)
    p.add_argument("--discard-prob", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3)
    return parser


def _range_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        if len(parts) == 1:
            v = int(parts[0])
            return v, v
        lo, hi = (int(v) for v in parts)
    except ValueError:
        raise ConfigError(f"expected N or MIN,MAX, got {text!r}") from None
    return lo, hi


def make_config(args: argparse.Namespace, k: int) -> EvalConfig:
    try:
        return EvalConfig(
            k=k,
            iou_thresholds=parse_float_list(args.iou_thresholds),
            ap_method=args.ap_method,
            recall_levels=parse_recall_levels(args.recall_levels),
            epsilon=args.epsilon,
            batch_size=args.batch_size,
            workers=args.workers,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _load(args: argparse.Namespace) -> Dataset:
    with open(args.gt, "rb") as gt, open(args.det, "rb") as det:
        return load_dataset(gt, det)


def _class_count(args: argparse.Namespace, dataset: Dataset) -> int:
    if args.classes is not None:
        if args.classes < 1:
            raise ConfigError("--classes must be >= 1")
        return args.classes
    top = dataset.max_label()
    if top < 0:
        raise ConfigError("no labels in either file; pass --classes")
    return top + 1


def _emit(obj: dict, output: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _prepare(args) -> tuple[Dataset, EvalConfig]:
    make_config(args, 1)  # surface flag errors before touching files
    dataset = _load(args)
    config = make_config(args, _class_count(args, dataset))
    dataset.validate(config.k)
    return dataset, config


def cmd_eval(args) -> int:
    dataset, config = _prepare(args)
    run = engine.evaluate(dataset, config)
    if args.export_pr:
        _export(run, args.export_pr)
    _emit(run.to_dict(), args.output)
    print(engine.summarize(run), file=sys.stderr)
    return 0


def _export(run, out_dir: str) -> list[str]:
    try:
        return engine.export_run(run, out_dir)
    except OSError as exc:
        raise ConfigError(f"cannot write PR curves to {out_dir!r}: {exc}") from None


def cmd_export_pr(args) -> int:
    dataset, config = _prepare(args)
    run = engine.evaluate(dataset, config)
    paths = _export(run, args.export_pr)
    _emit({"files": paths}, args.output)
    print(f"wrote {len(paths)} curve file(s) to {args.export_pr}", file=sys.stderr)
    return 0


def cmd_crosscheck(args) -> int:
    dataset, config = _prepare(args)
    reports = [engine.crosscheck(dataset, config, t) for t in config.iou_thresholds]
    _emit({"crosschecks": reports}, args.output)
    for r in reports:
        counts = r["annotation_counts"]
        print(
            f"IoU>{r['iou_threshold']:g}: mAP parallel={r['map_parallel']:.4f} "
            f"sequential={r['map_sequential']:.4f}; {len(r['differences'])} differing detection(s) "
            f"({counts[engine.UNEXPLAINED]} unexplained)",
            file=sys.stderr,
        )
    return 0


def cmd_bench(args) -> int:
    try:
        spec = SyntheticSpec(
            seed=args.seed,
            images=args.images,
            classes=args.classes or 5,
            gts_per_image=_range_pair(args.gts_per_image),
            dets_per_gt=_range_pair(args.dets_per_gt),
            false_det_rate=args.false_rate,
            jitter=args.jitter,
            difficult_prob=args.difficult_prob,
            discard_prob=args.discard_prob,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    if args.repeat < 1:
        raise ConfigError("--repeat must be >= 1")
    config = make_config(args, spec.classes)
    result = engine.bench(spec, config, args.repeat)
    _emit(result, args.output)
    print(
        f"{result['images']} images, {result['detections']} detections: "
        f"sequential {result['sequential_median_s']:.3f}s, batched {result['parallel_median_s']:.3f}s, "
        f"speedup {result['speedup']:.1f}x",
        file=sys.stderr,
    )
    return 0


COMMANDS = {"eval": cmd_eval, "crosscheck": cmd_crosscheck, "export-pr": cmd_export_pr, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
