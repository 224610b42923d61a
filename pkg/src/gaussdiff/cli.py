"""Command line entry point: ``gaussdiff run|validate|version``."""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .experiments.config import ConfigError, validate_config
from .experiments.run import EXIT_CONFIG, EXIT_OK, run_experiment


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussdiff", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    v = sub.add_parser("validate", help="check a config and list every problem")
    v.add_argument("config")
    sub.add_parser("version", help="print the package version")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        cfg = validate_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.kind}, T={cfg.schedule.T})")
        return EXIT_OK
    code = run_experiment(cfg)
    if code == EXIT_OK:
        print(f"wrote outputs to {cfg.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
