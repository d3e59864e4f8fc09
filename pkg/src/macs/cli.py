"""Command-line entry point: ``macs {gen,train,threshold,eval,bias,all}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, StageError
from .pipeline import STAGES, PipelineConfig, Run, run_stage, write_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help=f"run the '{name}' stage" if name != "all" else "run every stage")
        p.add_argument("--config", help="PipelineConfig JSON file")
        p.add_argument("--seed", type=int, help="override global_seed")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> PipelineConfig:
    overrides = {"global_seed": args.seed, "output_dir": args.out}
    if args.config:
        return PipelineConfig.load(args.config, **overrides)
    return PipelineConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"macs: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        run = Run(config)
        stages = STAGES if args.command == "all" else (args.command,)
        for name in stages:
            run_stage(run, name)
        if args.command == "all":
            write_manifest(run)
    except StageError as exc:
        print(f"macs: error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"macs: usage error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
