"""Command-line interface.

Exit codes: 0 success, 1 configuration/validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..pipeline import NumericalError
from .config import ConfigError, ExperimentConfig
from .runner import evaluate, run, sweep_order


def _load_config(path: str, args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(path)
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["seed"] = args.seed
        cfg = ExperimentConfig(raw)
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantprune",
        description="Joint quantization-and-pruning training experiments")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", type=str, default=None, help="override output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallel workers for sweep-order")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("config")
    p_train.add_argument("--resume", type=str, default=None,
                         help="resume from a checkpoint file")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("config")

    p_sweep = sub.add_parser("sweep-order", help="run P-Q and Q-P variants side by side")
    p_sweep.add_argument("config")

    p_report = sub.add_parser("report", help="render figures from a run directory")
    p_report.add_argument("dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = _load_config(args.config, args)
            summary = run(cfg, resume=args.resume)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "eval":
            cfg = _load_config(args.config, args)
            print(json.dumps(evaluate(cfg, args.checkpoint), indent=2, sort_keys=True))
        elif args.command == "sweep-order":
            cfg = _load_config(args.config, args)
            report = sweep_order(cfg, threads=args.threads)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "report":
            from .report import render_report
            for path in render_report(args.dir):
                print(path)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
