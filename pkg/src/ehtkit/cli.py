"""Command-line entry point.

Subcommands mirror the pipeline stages; ``run`` executes all of them and
writes the manifest.  Exit codes: 0 success, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalFailureError, ValidationError
from .pipeline import (
    PRESETS,
    ExperimentConfig,
    PipelineRun,
    preset_config,
    run_pipeline,
    run_stage,
)

COMMANDS = ("model", "prepare", "sample", "fit", "analyze", "verify", "run")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehtkit",
        description="XXZ-chain entanglement-Hamiltonian tomography at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run" else "full pipeline")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="path to a JSON experiment configuration")
        src.add_argument("--preset", choices=PRESETS, help="named built-in configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the measurement seed")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.preset:
        config = preset_config(args.preset)
    else:
        config = ExperimentConfig.from_json_file(args.config)
    if args.seed is not None:
        config.measurement["seed"] = int(args.seed)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "run":
            manifest = run_pipeline(config, args.out)
            print(manifest)
        else:
            run = PipelineRun(config, args.out)
            run_stage(run, args.command)
            print(f"{args.command}: wrote artifacts to {run.out}")
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
