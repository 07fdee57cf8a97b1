"""Command-line entry point.

One subcommand: ``export --manifest manifest.json``. Exit codes: 0 success,
2 config error (bad manifest, unavailable encoder), 3 data error
(unreadable source).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .errors import ExportError
from .export import export_embeddings, load_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qemb-export",
        description="Write embedding corpora in the .qemb format for the ranking engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    export = sub.add_parser("export", help="run one export manifest")
    export.add_argument("--manifest", required=True, help="path to a manifest JSON file")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        result = export_embeddings(load_manifest(args.manifest))
        print(json.dumps(result.to_dict(), sort_keys=True))
    except ExportError as exc:
        print(f"qemb-export: {exc}", file=sys.stderr)
        return exc.exit_code
    except BrokenPipeError:
        return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
