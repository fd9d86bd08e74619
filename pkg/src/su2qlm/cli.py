"""Command-line entry point: ``su2qlm {ground,sweep,analyze,ed,validate}``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from . import pipeline, validate
from .config import OUTPUT_ENV, ConfigError, load_config

logger = logging.getLogger("su2qlm")


def _add_common(p, config_required=True):
    p.add_argument("--config", metavar="PATH", required=config_required, help="INI run configuration")
    p.add_argument("--out", metavar="DIR", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p.add_argument("--seed", metavar="S", type=int, help="single seed instead of the configured list")
    p.add_argument("--chi", metavar="N", type=int, help="maximal bond dimension")


def build_parser():
    parser = argparse.ArgumentParser(prog="su2qlm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground state at one point per configured size")
    _add_common(p)
    p.add_argument("--resume", metavar="PATH", help="checkpoint to start the annealing from")

    p = sub.add_parser("sweep", help="ground states over the configured grid")
    _add_common(p)
    p.add_argument("--workers", metavar="N", type=int, default=1)
    p.add_argument("--resume", metavar="PATH", help="records file or output directory of an interrupted sweep")

    p = sub.add_parser("analyze", help="post-process record files")
    p.add_argument("records", nargs="+", help="records.jsonl files (or CSV tables for transition/extrapolate)")
    p.add_argument("--task", required=True, choices=pipeline.ANALYSIS_TASKS)
    p.add_argument("--config", metavar="PATH", help="take discard fraction and bulk window from this config")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--k-over-pi", type=float, default=1.0, help="structure-factor wave vector in units of pi")

    p = sub.add_parser("ed", help="exact diagonalization (L <= 8)")
    _add_common(p)
    p.add_argument("--levels", type=int, default=4)

    p = sub.add_parser("validate", help="run the self-check suite")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--quick", action="store_true", help="skip the TEBD-vs-ED check")
    p.add_argument("--show-basis", action="store_true", help="print the local basis table")
    p.add_argument("--corrupt-gate", action="store_true", help=argparse.SUPPRESS)
    return parser


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, chi=args.chi)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_INVALID


def _dispatch(args):
    if args.command == "ground":
        _, code = pipeline.run_ground(_config(args), args.out, args.resume)
        return code
    if args.command == "sweep":
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        _, code = pipeline.run_sweep(_config(args), args.workers, args.out, args.resume)
        return code
    if args.command == "ed":
        spectrum, paths = pipeline.run_ed(_config(args), args.levels, args.out)
        for row in spectrum:
            print(f"L={row['L']} N_M={row['N_M']} t={row['t']} level {row['level']}: {row['energy']:.12f}")
        return pipeline.EXIT_OK
    if args.command == "analyze":
        discard, window = 0.10, 0.5
        if args.config:
            cfg = load_config(args.config)
            discard, window = cfg.discard_fraction, cfg.bulk_window
        try:
            rows = pipeline.analyze(args.records, args.task, args.k_over_pi * math.pi, discard, window)
        except (ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return pipeline.EXIT_INVALID
        out = args.out or os.environ.get(OUTPUT_ENV) or "."
        path = pipeline.write_table(rows, os.path.join(out, f"analysis_{args.task}.csv"))
        print(path)
        return pipeline.EXIT_OK
    if args.command == "validate":
        checks = validate.run_checks(corrupt=args.corrupt_gate, quick=args.quick)
        text = validate.report_text(checks)
        if args.show_basis:
            text = validate.basis_table() + "\n\n" + text
        print(text)
        out = args.out or os.environ.get(OUTPUT_ENV)
        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "validate.txt"), "w", encoding="utf-8") as fh:
                fh.write(validate.basis_table() + "\n\n" + text + "\n")
        return pipeline.EXIT_OK if all(c.passed for c in checks) else pipeline.EXIT_INCOMPLETE
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
