"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import InputError, InvariantError
from .config import PipelineConfig
from .pipeline import STAGE_ORDER, run_all, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobcal",
        description="CDR mobility profiles, classes, alerts and calendar reports")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGE_ORDER + ["all", "show-config"]:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "show-config"
                           else "print the effective configuration and exit")
        p.add_argument("--config", default=None, metavar="PATH",
                       help="JSON config file (omit for built-in demo defaults)")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (overrides paths.out_dir)")
        p.add_argument("--seed", default=None, type=int, metavar="N",
                       help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress logs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        cfg = PipelineConfig.load(args.config, out_dir=args.out, seed=args.seed)
        if args.stage == "show-config":
            print(cfg.dump())
        elif args.stage == "all":
            run_all(cfg, quiet=args.quiet)
        else:
            run_stage(cfg, args.stage, quiet=args.quiet)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except InvariantError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
