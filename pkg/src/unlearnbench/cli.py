"""Command line entry point: ``unlearnbench run`` and ``unlearnbench report``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, with_overrides
from .harness import OUTPUT_ENV, run_experiment
from .report import emit_report, read_report, table_text


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unlearnbench", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a method x seed grid from a YAML config")
    run.add_argument("config")
    run.add_argument("--seeds", type=int, nargs="+")
    run.add_argument("--methods", type=_csv_list, help="comma-separated method names from the config")
    run.add_argument("--out", help=f"output root (default: ${OUTPUT_ENV} or the config's output_dir)")
    run.add_argument("--suite", type=_csv_list, help="comma-separated subset of M1,M2,M3")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("-q", "--quiet", action="store_true")

    rep = sub.add_parser("report", help="re-emit a finished run in another format")
    rep.add_argument("run_dir")
    rep.add_argument("--format", choices=("table", "csv", "json", "plots"), default="table")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            cfg = with_overrides(load_config(args.config), seeds=args.seeds, methods=args.methods, suite=args.suite)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        report = run_experiment(cfg, jobs=args.jobs, out_dir=args.out)
        if not args.quiet:
            print(table_text(report), end="")
        print(report.metadata["run_dir"])
        return 0 if report.ok else 1

    report = read_report(args.run_dir)
    try:
        paths = emit_report(report, args.format, args.run_dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.format == "table":
        print(paths[0].read_text(), end="")
    else:
        for path in paths:
            print(path)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
