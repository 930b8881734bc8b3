"""Command-line interface: batch commands, JSON summaries on stdout."""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence

from .config import AnalysisConfig, ConfigError, config_from_dict, load_config
from .embedding import EmbeddingError
from .gravity import AnalysisError
from .ingest import IngestError
from .pipeline import (
    PipelineError,
    cmd_bias,
    cmd_calibrate,
    cmd_evaluate,
    cmd_ingest,
    cmd_run,
    cmd_simulate,
)
from .scoring import ScoringError

_ERRORS = (
    ConfigError,
    IngestError,
    ScoringError,
    EmbeddingError,
    AnalysisError,
    PipelineError,
    OSError,
)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config document")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    parser.add_argument(
        "--input",
        metavar="PATH",
        action="append",
        help="JSONL comment dump (repeatable; overrides config)",
    )
    parser.add_argument(
        "--subreddit",
        metavar="NAME",
        action="append",
        help="restrict analysis to this subreddit (repeatable)",
    )
    parser.add_argument("--max-ancestors", type=int, default=None, metavar="N")
    parser.add_argument("--seed", type=int, default=None, metavar="N")
    parser.add_argument(
        "--exit-direction",
        choices=["ascending", "descending"],
        default=None,
        help="which end of the pull-force ordering exits first",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gravwell",
        description=(
            "Analyze comment dumps for echo-chamber pull: score per-user "
            "confirmation bias, simulate exit orders from pull forces, and "
            "validate them against observed exits."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="parse a dump and print corpus counts")
    run = sub.add_parser("run", help="full pipeline: bias, forces, evaluation")
    bias = sub.add_parser("bias", help="bias report only")
    simulate = sub.add_parser("simulate", help="bias plus force table")
    evaluate = sub.add_parser("evaluate", help="correlate an existing force table with exits")
    for p in (ingest, run, bias, simulate, evaluate):
        _add_common_flags(p)

    calibrate = sub.add_parser("calibrate", help="human-vs-model agreement report")
    calibrate.add_argument("--labels", metavar="PATH", required=True, help="JSONL of {kind, human, ai}")
    _add_common_flags(calibrate)
    return parser


def _resolve_config(args: argparse.Namespace) -> AnalysisConfig:
    config = load_config(args.config) if args.config else config_from_dict({})
    if args.input:
        config.inputs = list(args.input)
    if args.subreddit:
        config.subreddits = list(args.subreddit)
    if args.max_ancestors is not None:
        if args.max_ancestors < 0:
            raise ConfigError("--max-ancestors must be >= 0")
        config.max_ancestors = args.max_ancestors
    if args.seed is not None:
        config.seed = args.seed
    if args.exit_direction is not None:
        config.exit_direction = args.exit_direction
    if args.out:
        config.out_dir = args.out
    return config


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "ingest":
            payload = cmd_ingest(config)
        elif args.command == "run":
            payload = cmd_run(config).summary
        elif args.command == "bias":
            payload = cmd_bias(config).summary
        elif args.command == "simulate":
            payload = cmd_simulate(config).summary
        elif args.command == "evaluate":
            payload = cmd_evaluate(config).summary
        else:
            payload = cmd_calibrate(config, args.labels)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
