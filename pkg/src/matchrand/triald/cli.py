"""Command-line entry point for the trial randomization service."""

from __future__ import annotations

import argparse
import json
import os
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triald",
        description="persistent live-trial randomization service")
    parser.add_argument("--port", type=int,
                        default=int(os.environ.get("TRIALD_PORT", 8321)))
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--data-dir",
                        default=os.environ.get("TRIALD_DATA", "./triald-data"),
                        help="directory holding per-trial event logs")
    parser.add_argument("--config", default=None,
                        help="JSON file with role tokens, e.g. "
                             '{"tokens": {"enrollment": "...", '
                             '"statistician": "..."}}')
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tokens = None
    if args.config:
        with open(args.config) as fh:
            tokens = json.load(fh).get("tokens")

    import uvicorn

    from .api import create_app
    from .service import TrialService

    service = TrialService(args.data_dir)
    app = create_app(service, tokens=tokens)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
