"""Command-line entry points for the evaluation pipeline.

Stages run in order: generate → select → train-brs → evaluate / benchmark,
plus compare-selection for the criterion study. Each command is idempotent:
re-running with an unchanged config and intact outputs does no work.

Exit codes: 0 success, 2 config error, 3 missing upstream stage,
4 artifact integrity failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline import (
    ConfigError,
    IntegrityError,
    MissingUpstreamError,
    PipelineConfig,
    RunContext,
    export_policy_file,
    stage_benchmark,
    stage_compare_selection,
    stage_evaluate,
    stage_generate,
    stage_select,
    stage_train_brs,
    verify_run,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_INTEGRITY = 4

logger = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config YAML")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed override (non-negative)")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: ZSC_EVAL_WORKERS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zsc-eval",
        description="Generate, select, and evaluate zero-shot coordination partners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="train the candidate partner pool")
    _add_run_flags(p)

    p = sub.add_parser("select", help="pick the diversity-maximizing partner subset")
    _add_run_flags(p)
    p.add_argument("--criterion", choices=("br-div", "p-div"), default=None,
                   help="override the selection criterion")

    p = sub.add_parser("train-brs", help="train best responses for the selected set")
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="score one ego against the partner set")
    _add_run_flags(p)
    p.add_argument("--ego", default=None, help="benchmark ego name to train and score")
    p.add_argument("--ego-policy", default=None, help="stored policy file to score")

    p = sub.add_parser("benchmark", help="train and rank the configured egos")
    _add_run_flags(p)

    p = sub.add_parser("compare-selection",
                       help="compare selection criteria by BR diversity")
    _add_run_flags(p)

    p = sub.add_parser("export-policy", help="dump a stored policy as JSON")
    p.add_argument("policy", help="policy file (.pol)")
    p.add_argument("--json-out", default=None,
                   help="write here instead of stdout")

    p = sub.add_parser("verify", help="re-hash all artifacts recorded in a manifest")
    p.add_argument("--out", required=True, help="run directory holding manifest.json")

    return parser


def _open_context(args: argparse.Namespace) -> RunContext:
    config = PipelineConfig.load(args.config, out_override=args.out,
                                 seed_override=args.seed)
    return RunContext.open(config, workers=args.workers)


def run_command(args: argparse.Namespace) -> int:
    if args.command == "generate":
        stage_generate(_open_context(args))
    elif args.command == "select":
        stage_select(_open_context(args), criterion=args.criterion)
    elif args.command == "train-brs":
        stage_train_brs(_open_context(args))
    elif args.command == "evaluate":
        report = stage_evaluate(_open_context(args), ego=args.ego,
                                ego_policy=args.ego_policy)
        print(f"br-prox {report.point_estimate:.4f} "
              f"ci [{report.ci[0]:.4f}, {report.ci[1]:.4f}]")
    elif args.command == "benchmark":
        doc = stage_benchmark(_open_context(args))
        print(" > ".join(doc["aggregate"]["ranking"]))
    elif args.command == "compare-selection":
        stage_compare_selection(_open_context(args))
    elif args.command == "export-policy":
        doc = export_policy_file(args.policy, args.json_out)
        if args.json_out is None:
            json.dump(doc, sys.stdout, indent=2, sort_keys=True)
            print()
    elif args.command == "verify":
        problems = verify_run(args.out)
        if problems:
            for problem in problems:
                print(problem, file=sys.stderr)
            return EXIT_INTEGRITY
        print("all artifacts verified")
    else:  # pragma: no cover - argparse enforces choices
        raise AssertionError(args.command)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingUpstreamError as exc:
        print(f"missing upstream: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except IntegrityError as exc:
        print(f"integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
