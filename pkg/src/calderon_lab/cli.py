"""Command-line entry point ``calderon-lab``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .errors import CalderonLabError

COMMANDS = {
    "forward": ex.run_forward,
    "dtn": ex.run_dtn,
    "cgo": ex.run_cgo,
    "recover": ex.run_recovery_demo,
    "stability": ex.run_stability_sweep,
    "kelvin-demo": ex.run_kelvin_demo,
    "conductivity": ex.run_conductivity_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calderon-lab", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--out", type=Path, help="output directory (default from config)")
    parser.add_argument("--resolution", type=int, help="cells per axis")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", choices=("validation", "blind"))
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config, resolution=args.resolution, seed=args.seed, mode=args.mode)
        out = args.out or Path(cfg.out)
        COMMANDS[args.command](cfg, out)
    except (CalderonLabError, ValueError, OSError) as exc:
        print(f"calderon-lab {args.command}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0
