"""Command-line entry point: ``spf-combine <command> --config FILE [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import Config, default_config_text, load_config
from .errors import BackendError, ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

COMMANDS = ("synth", "combine", "evaluate", "regress", "ablate", "sentiment", "report", "config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spf-combine", description="Expert forecast combination experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "write a synthetic panel and realized series",
        "combine": "run every configured combiner over every indicator/horizon",
        "evaluate": "join combined forecasts with errors and panel conditions",
        "regress": "fit the configured regression models",
        "ablate": "rerun the challenger with each prompt component removed",
        "sentiment": "rerun the challenger under optimistic/neutral/pessimistic framing",
        "report": "emit plot data and a coefficient sign/significance summary",
        "config": "validate a config file or print the defaults",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="TOML config file (defaults apply to omitted keys)")
        p.add_argument("--out", help="output directory (overrides run.output)")
        if name == "synth":
            p.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        if name == "config":
            p.add_argument("--print-defaults", action="store_true", help="print the documented default config")
    return parser


def _run(args, cfg: Config) -> int:
    cmd = args.command
    if cmd == "synth":
        pipeline.cmd_synth(cfg, args.seed)
        print(f"wrote {cfg.output / 'data'}")
        return EXIT_OK
    if cmd == "combine":
        result = pipeline.cmd_combine(cfg)
        print(f"{len(result.runs)} runs, {len(result.failures)} failed -> {cfg.output / 'combine'}")
        return result.exit_code
    if cmd == "evaluate":
        table = pipeline.cmd_evaluate(cfg)
        print(f"{len(table)} analysis rows -> {cfg.output / 'evaluate'}")
        return EXIT_OK
    if cmd == "regress":
        tables, errors = pipeline.cmd_regress(cfg)
        for t in tables.values():
            print(t.render(), end="\n\n")
        for name, err in errors.items():
            print(f"{name}: not estimable ({err})", file=sys.stderr)
        return EXIT_OK if tables else EXIT_DATA
    if cmd == "ablate":
        result, tables = pipeline.cmd_ablate(cfg)
        for t in tables.values():
            print(t.render(), end="\n\n")
        return result.exit_code
    if cmd == "sentiment":
        result = pipeline.cmd_sentiment(cfg)
        print(f"{len(result.runs)} runs -> {cfg.output / 'sentiment'}")
        return result.exit_code
    if cmd == "report":
        rows, manifest = pipeline.cmd_report(cfg)
        print(f"{len(rows)} summary rows; bundle {manifest['bundle_sha256']}")
        return EXIT_OK
    if cmd == "config":
        print(f"{cfg.source}: ok (config sha256 {cfg.config_hash})")
        return EXIT_OK
    raise AssertionError(cmd)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "config" and args.print_defaults:
        sys.stdout.write(default_config_text())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg = cfg.with_output(args.out)
        return _run(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
