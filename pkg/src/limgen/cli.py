"""Command-line entry point: ingest, generate, evaluate, report,
validate-config. Exit codes: 0 success, 1 validation error, 2 runtime
failure."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evaluation import EmptyCorpus, render_report_table
from .pipeline import MissingArtifact, Run

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limgen",
        description="Generate and evaluate research-paper limitations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "generate", "evaluate"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, required=True)
        cmd.add_argument("--papers", type=int, default=None, help="limit paper count")
        cmd.add_argument("--force", action="store_true", help="regenerate existing outputs")
    report = sub.add_parser("report")
    report.add_argument("--config", type=Path, required=True)
    report.add_argument("--out", type=Path, default=None)
    validate = sub.add_parser("validate-config")
    validate.add_argument("--config", type=Path, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    problems = config.validate()
    if args.command == "validate-config":
        for problem in problems:
            print(problem, file=sys.stderr)
        print("config ok" if not problems else "config invalid")
        return EXIT_OK if not problems else EXIT_VALIDATION
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        return EXIT_VALIDATION

    run = Run(config)
    try:
        if args.command == "ingest":
            ids = run.run_ingest(limit=args.papers, force=args.force)
            print(f"ingested {len(ids)} papers")
        elif args.command == "generate":
            ids = run.run_generate(limit=args.papers, force=args.force)
            print(f"generated limitations for {len(ids)} papers")
        elif args.command == "evaluate":
            ids = run.run_evaluate(limit=args.papers, force=args.force)
            print(f"evaluated {len(ids)} papers")
        elif args.command == "report":
            report, quality = run.build_report()
            table = render_report_table(report, quality)
            if args.out is not None:
                args.out.write_text(table + "\n", encoding="utf-8")
            else:
                print(table)
    except MissingArtifact as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EmptyCorpus as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("stage failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
