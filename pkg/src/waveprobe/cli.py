"""``waveprobe <subcommand> --config <path> [--out <dir>] [--seed <u64>] [--workers <n>] [--force]``.

Exit status: 0 on success, 2 for an invalid configuration or command line,
3 when a stage fails.  ``waveprobe config-reference`` prints every
configuration key with its default.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import config_reference, load_config
from .errors import ConfigError
from .experiments import SUBCOMMANDS, StageError, run_subcommand

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="waveprobe", description="probe-based potential recovery experiments")
    sub = ap.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML configuration (defaults if omitted)")
        p.add_argument("--out", help="run directory (overrides the output root)")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--force", action="store_true", help="recompute even if outputs are current")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("config-reference", help="print all configuration keys with defaults")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    if args.command == "config-reference":
        sys.stdout.write(config_reference())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seeds={"seed": args.seed})
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
    except ConfigError as exc:
        print(f"config-invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_subcommand(args.command, cfg, args.out, args.workers, args.force)
    except StageError as exc:
        print(f"stage-failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(manifest.output_root)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
