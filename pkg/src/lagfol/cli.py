"""Command line entry point: ``lagfol <command> --config <path> [--out <dir>]``.

Exit codes: 0 all verdicts PASS, 1 a verdict FAIL, 2 configuration or IO error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config
from .dsl import DomainError
from .harness import COMMANDS, CommandError

log = logging.getLogger("lagfol")


def build_parser():
    parser = argparse.ArgumentParser(prog="lagfol", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides the config's 'output')")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out_dir = args.out or cfg.output
        os.makedirs(out_dir, exist_ok=True)
        report = COMMANDS[args.command](cfg, out_dir)
        path = report.write(out_dir)
    except (ConfigError, CommandError, DomainError, OSError) as err:
        print(f"lagfol: error: {err}", file=sys.stderr)
        return 2
    ff = report.first_failure
    for stage in report.stages:
        print(f"{stage.name:<24} {stage.verdict}")
    if ff is not None:
        print(f"first failing stage: {ff.name}; witness: {ff.witness}")
    log.info("report written to %s", path)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
