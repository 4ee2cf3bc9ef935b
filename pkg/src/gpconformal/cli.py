"""Command-line entry point: ``gpconformal run config.json``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import REPORT_FORMATS, ConfigError, emit_report, load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _formats(text):
    fmts = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in fmts if f not in REPORT_FORMATS]
    if bad or not fmts:
        raise argparse.ArgumentTypeError(f"formats must be drawn from {','.join(REPORT_FORMATS)}")
    return fmts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpconformal",
        description="GP surrogate evaluation with cross-conformal prediction intervals.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment grid from a JSON config")
    run.add_argument("config", help="path to the JSON experiment config")
    run.add_argument("--out-dir", default="results", help="directory for report files")
    run.add_argument("--format", type=_formats, default=None,
                     help="comma-separated subset of json,csv,md")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads for the kernel branches (0 = auto)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.format is not None:
        overrides["formats"] = args.format
    try:
        config = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report = run_experiment(config)
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not report.records:
        print("runtime error: every kernel branch failed", file=sys.stderr)
        for f in report.failed_branches:
            print(f"  nu={f['nu']}: {f['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        paths = emit_report(report, config.formats, args.out_dir)
    except OSError as exc:
        print(f"runtime error: cannot write reports: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
