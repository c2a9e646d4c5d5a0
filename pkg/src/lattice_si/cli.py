"""Command-line experiment driver.

Reads a flat ``key = value`` configuration file, applies flag overrides,
runs the seeded BLER sweep with its baselines and writes plot-ready CSV.
Exit codes: 0 on success, 2 on configuration errors (with a one-line
diagnostic on stderr).  Worker count comes from the ``LATSI_WORKERS``
environment variable (default: available parallelism).
"""

from __future__ import annotations

import argparse
import sys

from .filters import FilterDesignError
from .lattices import LatticeError
from .nested import NestedLatticePair  # noqa: F401  (fixture loading lives behind configs)
from .sim import (
    ConfigError,
    config_from_mapping,
    emit_results,
    parse_config_file,
    run_bler_sweep,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latsi-sim",
        description="Monte-Carlo BLER sweep for nested-lattice coding on side-information channels",
    )
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--scenario", help="scalar-complex-slow | mimo-real-fixed | mimo-real-fast")
    parser.add_argument("--snr", help="comma-separated SNR grid in dB")
    parser.add_argument("--rate", type=float, help="code rate in bits per channel use")
    parser.add_argument("--trials", type=int, help="trials per SNR point")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--baselines", help="comma-separated baseline set (empty string for none)")
    parser.add_argument("--out", help="output CSV path (default: print to stdout)")
    parser.add_argument("--format", choices=("csv", "table"), default="csv")
    parser.add_argument("--workers", type=int, help="override worker count")
    return parser


def config_from_args(args):
    mapping = parse_config_file(args.config) if args.config else {}
    if args.scenario is not None:
        mapping["scenario"] = args.scenario
    if args.snr is not None:
        mapping["snr_grid_db"] = args.snr
    if args.rate is not None:
        mapping["rate_bits"] = args.rate
    if args.trials is not None:
        mapping["trials_per_point"] = args.trials
    if args.seed is not None:
        mapping["master_seed"] = args.seed
    if args.baselines is not None:
        mapping["baselines"] = args.baselines
    return config_from_mapping(mapping)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        result = run_bler_sweep(config, workers=args.workers)
    except (ConfigError, FilterDesignError, LatticeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = emit_results(result, path=args.out, fmt=args.format)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
