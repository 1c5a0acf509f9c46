"""Command line: ``trendfuzz run | report | compare``."""

from __future__ import annotations

import argparse
import logging
import sys

from trendfuzz.errors import ConfigError, TrendfuzzError

log = logging.getLogger("trendfuzz")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trendfuzz", description="Trend-driven ensemble fuzzing orchestrator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run (or resume) a campaign")
    run.add_argument("--config", required=True, help="campaign config file (TOML)")
    run.add_argument("--cpu-budget", type=float, dest="total_budget", help="total CPU seconds")
    run.add_argument("--cores", type=int)
    run.add_argument("--policy", choices=["trend", "roundrobin"])
    run.add_argument("--seed", type=int, dest="rng_seed")
    run.add_argument("--output", dest="output_dir")
    run.add_argument("--resume", action="store_true", help="continue the campaign in the output directory")

    rep = sub.add_parser("report", help="tables and plot-ready CSV from a campaign directory")
    rep.add_argument("dir")
    rep.add_argument("--out", help="report directory (default: DIR/report)")

    cmp_ = sub.add_parser("compare", help="rank campaigns by final bitmap density")
    cmp_.add_argument("dirs", nargs="+")
    return p


def cmd_run(args) -> int:
    from trendfuzz.campaign import run_from_config
    from trendfuzz.config import load_config

    overrides = {k: getattr(args, k) for k in ("total_budget", "cores", "policy", "rng_seed", "output_dir")}
    try:
        config = load_config(args.config, overrides=overrides)
    except ConfigError as exc:
        print(f"trendfuzz: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_from_config(config, resume=args.resume)
    except ConfigError as exc:
        print(f"trendfuzz: invalid config: {exc}", file=sys.stderr)
        return 2
    except TrendfuzzError as exc:
        print(f"trendfuzz: campaign aborted: {exc}", file=sys.stderr)
        return 1
    print(f"{len(result.rounds)} rounds, {result.elapsed_cpu:g} CPU-s, "
          f"final density {100 * result.final_density:.4f}% -> {config.output_dir}")
    return 1 if result.aborted else 0


def cmd_report(args) -> int:
    from trendfuzz.report import ReportError, aligned, build_report, round_table, TABLE_COLUMNS

    try:
        report = build_report(args.dir, args.out)
    except ReportError as exc:
        print(f"trendfuzz: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(aligned(TABLE_COLUMNS, round_table(report.rounds)))
    for name, path in report.files.items():
        print(f"{name}: {path}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    from trendfuzz.report import ReportError, compare, format_compare

    try:
        rows = compare(args.dirs)
    except (ReportError, OSError, ValueError) as exc:
        print(f"trendfuzz: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(format_compare(rows))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return {"run": cmd_run, "report": cmd_report, "compare": cmd_compare}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
