"""
Command-line entry point.

    gsi [--config PATH] [--seed N] [--out DIR] [--threads N] [--emit-svg]
        [--set key=value ...] [-v | -q] {complete,group-rec,rank-table,convergence,synth}

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
import argparse
import logging
import sys

from config import load_config
from errors import GsiError
from experiments import COMMANDS
from utils import setup_logging

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gsi",
        description="Soft-impute matrix completion and group recommendation experiments",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="Experiment to run")
    parser.add_argument("--config", help="YAML experiment config")
    parser.add_argument("--seed", type=int, help="Seed for every section that does not set its own")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--threads", type=int, help="Worker threads for group and rank-table evaluation")
    parser.add_argument("--emit-svg", action="store_true", help="Also write SVG charts")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value, e.g. --set softimpute.epsilon=1e-4",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(1 if args.verbose else -1 if args.quiet else 0)
    try:
        config = load_config(
            args.config,
            overrides=args.overrides,
            seed=args.seed,
            out=args.out,
            threads=args.threads,
            emit_svg=args.emit_svg,
        )
        COMMANDS[args.command](config)
    except GsiError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"gsi {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
