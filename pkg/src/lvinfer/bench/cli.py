"""Command-line entry point.

Every subcommand takes --config <path>, optional --seed <int> override and
--out <dir>. Success prints a status JSON and exits 0; failures print a
machine-readable error JSON to stdout and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .pipeline import PipelineError, run_stage

_SUBCOMMANDS = {
    "generate-ko": ("generate", "ko"),
    "generate-res": ("generate", "reservoir"),
    "train-lvae": ("train-lvae", None),
    "prune": ("prune", None),
    "train-csgan": ("train-csgan", None),
    "sample-posterior": ("sample-posterior", None),
    "metrics": ("metrics", None),
    "entropy": ("entropy", None),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lvinfer",
        description="Latent-space posterior inference experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--force", action="store_true", help="ignore the stage cache")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    stage, expected_kind = _SUBCOMMANDS[args.command]
    try:
        config = json.loads(Path(args.config).read_text())
        if args.seed is not None:
            config["seed"] = args.seed
        if expected_kind and config.get("experiment") != expected_kind:
            raise PipelineError(
                f"{args.command} needs experiment={expected_kind!r}, "
                f"config says {config.get('experiment')!r}"
            )
        status = run_stage(stage, config, args.out, force=args.force)
    except Exception as exc:  # noqa: BLE001 - reported as structured output
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "command": args.command}))
        return 1
    print(json.dumps(status))
    return 0


if __name__ == "__main__":
    sys.exit(main())
