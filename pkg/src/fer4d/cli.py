"""Command-line driver: ``fer4d [options] COMMAND [COMMAND ...]``.

Commands run in the order given; ``all`` expands to the full chain from
``synth`` to ``report``. Errors go to standard error with exit status 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from fer4d.config import PipelineConfig, load_config
from fer4d.errors import FER4DError
from fer4d.pipeline import COMMANDS, run_pipeline

log = logging.getLogger("fer4d")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fer4d", description="Multi-view 4D facial expression pipeline.")
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument(
        "--workspace",
        metavar="PATH",
        default=os.environ.get("FER4D_WORKSPACE"),
        help="workspace directory (default: $FER4D_WORKSPACE)",
    )
    p.add_argument("--seed", type=int, metavar="U64", help="override the configured seed")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes per stage")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    p.add_argument("commands", nargs="+", metavar="COMMAND", help=f"one of: {', '.join(COMMANDS)}, all")
    return p


def expand(commands) -> list[str]:
    out = []
    for c in commands:
        if c == "all":
            out.extend(COMMANDS)
        elif c in COMMANDS:
            out.append(c)
        else:
            raise FER4DError(f"unknown command {c!r}; choose from {', '.join(COMMANDS)}, all")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        if not args.workspace:
            raise FER4DError("no workspace given; pass --workspace or set FER4D_WORKSPACE")
        if args.jobs < 1:
            raise FER4DError("--jobs must be >= 1")
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise FER4DError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.replace(seed=args.seed)
        for command in expand(args.commands):
            run_pipeline(cfg, args.workspace, command, jobs=args.jobs)
    except FER4DError as exc:
        print(f"fer4d: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fer4d: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
