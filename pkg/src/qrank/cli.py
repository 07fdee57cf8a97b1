"""Command-line entry point.

Every run-stage subcommand reads one JSON config and accepts any config key
as a dotted flag override (`--views.epochs 30`, `--search.mode uniform`).
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .config import RunConfig, apply_overrides, coerce_override, load_config_file
from .errors import ConfigError, QrankError
from .pipeline import STAGES, emit_report, run_pipeline
from .synth import SyntheticSpec, generate_synthetic

_STAGE_COMMANDS = {
    "ingest": "ingest",
    "train-views": "train-views",
    "search": "search",
    "train-scorer": "train-scorer",
    "evaluate": "evaluate",
    "pipeline": "evaluate",
}


def _parse_overrides(tokens: list[str]) -> dict:
    """Pairs of `--dotted.key value` left over after known flags."""
    overrides = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            i += 1
            if i >= len(tokens):
                raise ConfigError(f"flag --{key} needs a value")
            raw = tokens[i]
        overrides[key] = coerce_override(raw)
        i += 1
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrank",
        description=(
            "Multi-view contrastive training, knowledge retrieval, and "
            "score-weighted fusion over .qemb embedding files."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in _STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the pipeline through its {name} stage")
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--force", action="store_true", help="recompute cached stages")

    p = sub.add_parser("synth", help="generate a synthetic corpus triple")
    p.add_argument("--config", help="JSON synth config")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--seed", type=int, help="generation seed (overrides config)")

    p = sub.add_parser("report", help="render Markdown + CSV from report JSON files")
    p.add_argument("reports", nargs="+", help="report.json files, comparison order")
    p.add_argument("--out", required=True, help="output base path (writes .md and _curves.csv)")

    return parser


def _cmd_stage(command: str, args, overrides: dict) -> int:
    data = load_config_file(args.config) if args.config else {}
    cfg = RunConfig.from_dict(apply_overrides(data, overrides))
    result = run_pipeline(cfg, force=args.force, upto=_STAGE_COMMANDS[command])

    if command == "search":
        search = result.stage("search")
        with open(f"{search.path}/search.jsonl", encoding="utf-8") as fh:
            sys.stdout.write(fh.read())
        return 0
    if command == "pipeline" or command == "evaluate":
        summary = {
            "report": result.report_path,
            "fusion": result.fusion_path,
            "stages": [
                {"stage": s.name, "digest": s.digest, "reused": s.reused}
                for s in result.stages
            ],
            "metrics": {
                "fused_rank1": result.report["metrics"]["fused"]["accuracy"],
                "vision_only_rank1": result.report["metrics"]["vision_only"]["accuracy"],
                "duplication_rate_pct": result.report["metrics"]["duplication_rate_pct"],
            },
        }
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    for info in result.stages:
        print(
            json.dumps(
                {"stage": info.name, "digest": info.digest, "reused": info.reused,
                 "path": info.path},
                sort_keys=True,
            )
        )
    return 0


def _cmd_synth(args, overrides: dict) -> int:
    data = load_config_file(args.config) if args.config else {}
    data = apply_overrides(data, overrides)
    if args.out is not None:
        data["out_dir"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    if "out_dir" not in data:
        raise ConfigError("synth: out_dir required (--out or config)")
    if "seed" not in data:
        raise ConfigError("synth: seed required (--seed or config)")
    spec_data = data.get("spec", {})
    if not isinstance(spec_data, dict):
        raise ConfigError("synth: spec must be an object")
    try:
        spec = SyntheticSpec(**spec_data)
    except TypeError as exc:
        raise ConfigError(f"synth: {exc}") from exc
    paths = generate_synthetic(spec, int(data["seed"]), data["out_dir"])
    print(json.dumps(paths, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    reports = [load_config_file(p) for p in args.reports]
    for path, doc in zip(args.reports, reports):
        if not isinstance(doc, dict) or "metrics" not in doc:
            raise ConfigError(f"report: {path} is not a pipeline report")
    md_path, csv_path = emit_report(reports, args.out)
    print(json.dumps({"markdown": md_path, "curves": csv_path}, sort_keys=True))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command == "report":
            if extra:
                raise ConfigError(f"unexpected argument {extra[0]!r}")
            return _cmd_report(args)
        overrides = _parse_overrides(extra)
        if args.command == "synth":
            return _cmd_synth(args, overrides)
        return _cmd_stage(args.command, args, overrides)
    except QrankError as exc:
        print(f"qrank: {exc}", file=sys.stderr)
        return exc.exit_code
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
