"""Command line entry point: ``magkalman <kind> --config path.json``.

Exit codes: 0 success, 2 configuration error, 3 regime error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import ConfigError, NumericError, RegimeError, UnsupportedError
from .experiments import FIGURES, KINDS, load_config, parse_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="magkalman",
        description="Kalman filtering, precision bounds and figure data for "
                    "continuously measured atomic magnetometers.")
    ap.add_argument("kind", choices=KINDS, help="what to run")
    ap.add_argument("--config", help="JSON experiment config (optional for 'figure' with --name)")
    ap.add_argument("--name", choices=FIGURES, help="figure name for kind 'figure'")
    ap.add_argument("--out", help="output directory (default: print to stdout)")
    ap.add_argument("--seed", type=int, help="master seed, overrides run.master_seed")
    ap.add_argument("--threads", type=int,
                    help="worker threads (default: MAGKALMAN_THREADS or all cores)")
    ap.add_argument("--allow-out-of-regime", action="store_true",
                    help="run even if the linear-Gaussian validity checks fail")
    ap.add_argument("--format", choices=("csv", "gnuplot"), default="csv",
                    help="comma separated or space separated output")
    return ap


def _config(args):
    if args.config:
        cfg = load_config(args.config, args.kind)
        if args.kind == "figure" and args.name and args.name != cfg.run.figure:
            raise ConfigError(f"run.figure: config says {cfg.run.figure!r}, "
                              f"--name says {args.name!r}")
        return cfg
    if args.kind == "figure" and args.name:
        return parse_config({"run": {"kind": "figure", "figure": args.name}})
    raise ConfigError("--config is required" + (" (or --name)" if args.kind == "figure" else ""))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        cfg = _config(args)
        tables = run_experiment(cfg, threads=args.threads,
                                allow_out_of_regime=args.allow_out_of_regime, seed=args.seed)
        sep = "," if args.format == "csv" else " "
        ext = ".csv" if args.format == "csv" else ".dat"
        out_dir = args.out or cfg.output.path
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            for tab in tables:
                path = os.path.join(out_dir, tab.name + ext)
                tab.write(path, cfg.output.digits, sep)
                print(path)
        else:
            for tab in tables:
                sys.stdout.write(tab.to_text(cfg.output.digits, sep))
    except (ConfigError, UnsupportedError) as e:
        print(f"magkalman: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as e:
        print(f"magkalman: regime error: {e}", file=sys.stderr)
        return EXIT_REGIME
    except NumericError as e:
        print(f"magkalman: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
