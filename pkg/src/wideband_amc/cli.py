"""Command-line front end.

Subcommands: ``gen``, ``detect``, ``classify``, ``train``, ``eval`` and
``plot``. Exit status is 0 on success, 1 on a usage error (bad flags,
missing or invalid config) and 2 on a data error (unreadable or
inconsistent dataset, records or report).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import classify as cl
from . import datastore as ds
from . import pipeline
from .detect import DetectError, DetectorConfig, DetectorMethod
from .evaluation import EvalError, MatchConfig, map_report
from .plotting import PlotError, plot_report
from .synth import ConfigError, GenConfig, generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``snr=12..30:2`` -> ``("snr", [12, 14, ..., 30])`` (both ends inclusive)."""
    try:
        key, rng = text.split("=", 1)
        span, _, step = rng.partition(":")
        lo, hi = (float(v) for v in span.split(".."))
        step = float(step) if step else 1.0
    except ValueError:
        raise UsageError(f"bad sweep {text!r}; expected e.g. snr=12..30:2") from None
    if key != "snr":
        raise UsageError(f"only snr sweeps are supported, got {key!r}")
    if step <= 0 or hi < lo:
        raise UsageError("sweep needs step > 0 and start <= stop")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return key, [float(np.round(lo + i * step, 9)) for i in range(count)]


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _load_config(args) -> GenConfig:
    cfg = GenConfig()
    if args.config:
        cfg = ds.load_gen_config(_require(args.config, "config file"))
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.count is not None:
        changes["entry_count"] = args.count
    return cfg.replace(**changes) if changes else cfg


def cmd_gen(args) -> int:
    try:
        cfg = _load_config(args)
    except (ds.SchemaError, ds.DatastoreError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    points = [(Path(args.out), cfg)]
    if args.sweep:
        _, values = parse_sweep(args.sweep)
        points = [(Path(args.out) / f"snr_{v:g}", cfg.replace(snr_grid=(v,))) for v in values]
    for out, point_cfg in points:
        summary = ds.write_dataset(generate_dataset(point_cfg, jobs=args.jobs), out, point_cfg)
        print(json.dumps({"out": str(out), **summary}, sort_keys=True))
    return EXIT_OK


def _detector_config(args) -> DetectorConfig:
    fields = dict(method=DetectorMethod.parse(args.method))
    for name in ("threshold_db", "merge_gap_bins", "min_run_bins", "nms_iou", "mf_min_score"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    if args.valley_split_db is not None:
        fields["valley_split_db"] = args.valley_split_db if args.valley_split_db > 0 else None
    if args.mf_saturation_db is not None:
        fields["mf_saturation_db"] = args.mf_saturation_db if args.mf_saturation_db > 0 else None
    if args.mf_bandwidths:
        fields["mf_bandwidths"] = tuple(args.mf_bandwidths)
    return DetectorConfig(**fields)


def cmd_detect(args) -> int:
    if args.method.lower() == "truth":
        cfg = None
    else:
        try:
            cfg = _detector_config(args)
        except DetectError as exc:
            raise UsageError(str(exc)) from exc
    dataset = ds.read_dataset(_require(args.dataset, "dataset"))
    if cfg is None:
        records = pipeline.truth_proposals(dataset)
    else:
        records = pipeline.detect_dataset(dataset, cfg, jobs=args.jobs)
    n = ds.write_proposals(records, args.out)
    print(json.dumps({"entries": len(dataset), "proposals": n}))
    return EXIT_OK


def _rolloff(dataset) -> float:
    return float(dataset.manifest.get("generator", {}).get("rolloff", GenConfig().rolloff))


def cmd_train(args) -> int:
    dataset = ds.read_dataset(_require(args.dataset, "dataset"))
    options = {}
    if args.classifier == "linear":
        options = {"epochs": args.epochs, "lr": args.lr}
    try:
        model = pipeline.train(dataset, args.classifier, _rolloff(dataset), **options)
    except cl.TrainingError as exc:
        raise ds.DatastoreError(f"training failed: {exc}") from exc
    cl.save_model(model, args.out)
    print(json.dumps({"classifier": args.classifier, "classes": list(model.classes)}))
    return EXIT_OK


def cmd_classify(args) -> int:
    dataset = ds.read_dataset(_require(args.dataset, "dataset"))
    proposals = ds.read_proposals(_require(args.proposals, "proposals file"))
    model = cl.load_model(_require(args.model, "model file"))
    _check_ids(proposals, len(dataset))
    results = pipeline.classify_proposals(dataset, proposals, model, _rolloff(dataset))
    n = ds.write_results(results, args.out)
    print(json.dumps({"results": n}))
    return EXIT_OK


def _check_ids(records, count: int) -> None:
    for r in records:
        if not 0 <= r.entry_id < count:
            raise ds.DatastoreError(f"record refers to entry {r.entry_id}, dataset has {count}")


def cmd_eval(args) -> int:
    dataset = ds.read_dataset(_require(args.dataset, "dataset"))
    path = _require(args.results, "results file")
    records = ds.read_results(path) if args.mode == "joint" else ds.read_proposals(path)
    _check_ids(records, len(dataset))
    cfg = MatchConfig.for_capture(dataset.fs, dataset.entry_len)
    report = map_report(records, pipeline.truths_of(dataset), cfg, mode=args.mode)
    ds.write_report(report, args.report)
    keys = ("ap_mean", "ap50", "ap75", "ar6", "accuracy")
    print(json.dumps({k: report[k] for k in keys if k in report}))
    return EXIT_OK


def cmd_plot(args) -> int:
    reports = [ds.read_report(_require(p, "report")) for p in args.report]
    paths = plot_report(reports, args.out, args.format)
    print(json.dumps({"written": [str(p) for p in paths]}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wideband-amc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--config", help="generator config JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--sweep", help="e.g. snr=12..30:2 writes one dataset per point under --out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("detect", help="propose bands for every entry")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", required=True, choices=["energy", "mf", "truth"],
                   help="truth echoes the ground-truth bands")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-db", type=float)
    p.add_argument("--merge-gap-bins", type=int)
    p.add_argument("--min-run-bins", type=int)
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--valley-split-db", type=float, help="0 disables valley splitting")
    p.add_argument("--mf-min-score", type=float)
    p.add_argument("--mf-saturation-db", type=float, help="0 leaves template levels uncapped")
    p.add_argument("--mf-bandwidths", type=float, nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train", help="fit a classifier on ground-truth bands")
    p.add_argument("--dataset", required=True)
    p.add_argument("--classifier", required=True, choices=["centroid", "linear"])
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="label every proposal")
    p.add_argument("--dataset", required=True)
    p.add_argument("--proposals", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="score proposals or results")
    p.add_argument("--dataset", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--mode", choices=["detection", "joint"], default="detection")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="charts and CSV tables from reports")
    p.add_argument("--report", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["svg", "csv"], default="svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ds.DatastoreError, cl.ClassifyError, EvalError, PlotError, DetectError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
