"""`trainer run --request request.json` command-line front."""

from __future__ import annotations

import argparse
import sys

from .request import ToolkitError
from .trainers import run_request_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainer", description="Deterministic tabular baselines.")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="train from a JSON request and print the result block")
    run_p.add_argument("--request", default="request.json", help="request file path")
    run_p.add_argument("--workdir", default=".", help="where predictions.csv is written")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_request_file(args.request, workdir=args.workdir)
    except ToolkitError as exc:
        print(f"trainer error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
