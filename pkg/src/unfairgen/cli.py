"""Command-line entry point.

Each subcommand runs the pipeline up to the corresponding stage, reusing any
up-to-date artifacts in the output directory. Exit codes: 0 success,
2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from unfairgen import __version__
from unfairgen.pipeline import ConfigError, RunConfig, StageError, run_pipeline

SUBCOMMANDS = {
    "landscape": "data",
    "split": "split",
    "train-predictor": "predictor",
    "pretrain": "pretrain",
    "finetune": "finetune",
    "sample": "sample",
    "search": "search",
    "enumerate": "search",
    "evaluate": "evaluate",
    "report": "report",
    "run": "report",
}


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unfairgen", description="Bias-guided discovery of high-bias subgroups.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--tau", type=_floats, help="comma-separated bias thresholds (replaces quantile taus)")
        p.add_argument("--out", help="run directory")
        p.add_argument("--method", type=_names, help="comma-separated methods, e.g. bggn,vanilla,relaxed:2")
        p.add_argument("--n-samples", type=int, dest="n_samples")
        p.add_argument("--repeats", type=int, help="sampling repeats per generative method")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    doc = {}
    if args.config:
        doc = RunConfig.load(args.config).to_dict()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        doc["seed"] = args.seed
    if args.tau is not None:
        doc["tau"], doc["tau_quantiles"] = args.tau, []
    if args.out:
        doc["out"] = args.out
    if args.command == "enumerate":
        doc["methods"] = ["enumerate"]
    if args.method:
        doc["methods"] = args.method
    if args.n_samples is not None:
        doc["n_samples"] = args.n_samples
    if args.repeats is not None:
        doc["repeats"] = args.repeats
    return RunConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        manifest = run_pipeline(cfg, until=SUBCOMMANDS[args.command])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    times = {k: round(v["wall_time"], 3) for k, v in manifest.stages.items()}
    print(json.dumps({"out": str(manifest.root), "taus": manifest.taus, "stage_seconds": times}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
