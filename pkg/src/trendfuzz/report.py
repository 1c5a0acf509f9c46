"""Reports built from campaign telemetry.

Reading is strictly read-only on the campaign files; output goes to a
separate directory (``<campaign>/report`` by default).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from trendfuzz import bitmap as bm
from trendfuzz.scheduler import RoundRecord
from trendfuzz.telemetry import COVERAGE_FILE, ROUNDS_FILE, UNION

log = logging.getLogger(__name__)

TABLE_COLUMNS = ["round", "winner", "diff_peak", "theta", "t_prep", "t_focus"]


class ReportError(Exception):
    pass


@dataclass
class Report:
    rounds: list[RoundRecord]
    fuzzers: list[str]
    files: dict[str, Path] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def load_rounds_tolerant(output_dir: Path, warnings: list[str]) -> list[RoundRecord]:
    path = output_dir / ROUNDS_FILE
    if not path.exists():
        raise ReportError(f"no {ROUNDS_FILE} in {output_dir}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(RoundRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            warnings.append(f"{ROUNDS_FILE}:{lineno}: skipped corrupt record ({exc})")
    return records


def load_coverage(output_dir: Path, warnings: list[str]) -> list[tuple[float, str, int, float]]:
    path = output_dir / COVERAGE_FILE
    if not path.exists():
        warnings.append(f"no {COVERAGE_FILE}; coverage series omitted")
        return []
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                rows.append((float(row["cpu_seconds"]), row["fuzzer"], int(row["count"]), float(row["density"])))
            except (KeyError, TypeError, ValueError):
                warnings.append(f"{COVERAGE_FILE}:{lineno}: skipped malformed row")
    return rows


def _fmt_theta(theta: float) -> str:
    return f"{theta:.2f}".rstrip("0").rstrip(".")


def round_table(rounds: list[RoundRecord]) -> list[list[str]]:
    rows = []
    for r in rounds:
        label = f"{r.round}*" if r.exit_early else str(r.round)
        rows.append([label, r.winner, str(r.diff_peak), _fmt_theta(r.theta),
                     f"{r.t_prep_actual:g}", f"{r.t_focus_assigned:g}"])
    return rows


def aligned(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(x).rjust(w) if i else str(x).ljust(w) for i, (x, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"


def allocation_matrix(rounds: list[RoundRecord], fuzzers: list[str]) -> list[list[float]]:
    return [[r.allocation.get(f, 0.0) for f in fuzzers] for r in rounds]


def check_allocation_rows(rounds: list[RoundRecord], tol: float = 1e-9) -> list[int]:
    """Rounds whose allocation neither sums to 1 nor is all zero."""
    bad = []
    for r in rounds:
        total = math.fsum(r.allocation.values())
        if abs(total - 1.0) > tol and any(v != 0 for v in r.allocation.values()):
            bad.append(r.round)
    return bad


def build_report(output_dir: str | os.PathLike, report_dir: str | os.PathLike | None = None) -> Report:
    output_dir = Path(output_dir)
    warnings: list[str] = []
    rounds = load_rounds_tolerant(output_dir, warnings)
    fuzzers: list[str] = []
    for r in rounds:
        for name in r.allocation:
            if name not in fuzzers:
                fuzzers.append(name)
    for rnd in check_allocation_rows(rounds):
        warnings.append(f"round {rnd}: allocation does not sum to 1")
    coverage = load_coverage(output_dir, warnings)

    dest = Path(report_dir) if report_dir is not None else output_dir / "report"
    dest.mkdir(parents=True, exist_ok=True)
    report = Report(rounds, fuzzers, warnings=warnings)

    table = round_table(rounds)
    p = dest / "rounds.txt"
    p.write_text(aligned(TABLE_COLUMNS, table))
    report.files["table_text"] = p
    p = dest / "rounds.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS + ["exit_early"])
        for r in rounds:
            w.writerow([r.round, r.winner, r.diff_peak, r.theta, r.t_prep_actual, r.t_focus_assigned,
                        int(r.exit_early)])
    report.files["table_csv"] = p

    p = dest / "allocation_heatmap.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round"] + fuzzers)
        for r, row in zip(rounds, allocation_matrix(rounds, fuzzers)):
            w.writerow([r.round] + [f"{v:.6f}" for v in row])
    report.files["heatmap_csv"] = p

    series_names = list(dict.fromkeys(name for _, name, _, _ in coverage))
    by_time: dict[float, dict[str, float]] = {}
    for t, name, _, dens in coverage:
        by_time.setdefault(t, {})[name] = dens
    p = dest / "coverage_series.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cpu_seconds"] + series_names)
        for t in sorted(by_time):
            w.writerow([f"{t:g}"] + [by_time[t].get(n, "") for n in series_names])
    report.files["coverage_csv"] = p

    for msg in warnings:
        log.warning("%s", msg)
    return report


@dataclass
class CompareRow:
    rank: int
    directory: str
    policy: str
    final_density: float
    tie: bool = False


def final_density(output_dir: Path) -> tuple[float, str]:
    summary = output_dir / "summary.json"
    if summary.exists():
        data = json.loads(summary.read_text())
        return float(data["final_density"]), str(data.get("policy", "?"))
    union = output_dir / "bitmaps" / f"{UNION}.bitmap"
    if union.exists():
        data = union.read_bytes()
        return bm.density(bm.deserialize(data, len(data))), "?"
    rows = load_coverage(output_dir, [])
    unions = [r for r in rows if r[1] == UNION]
    if unions:
        return unions[-1][3], "?"
    raise ReportError(f"no final coverage found in {output_dir}")


def compare(dirs: list[str | os.PathLike]) -> list[CompareRow]:
    """Rank campaigns by final ensemble density, best first; equal densities share a rank."""
    entries = []
    for d in dirs:
        dens, policy = final_density(Path(d))
        entries.append((str(d), policy, dens))
    entries.sort(key=lambda e: -e[2])
    rows: list[CompareRow] = []
    for i, (d, policy, dens) in enumerate(entries):
        if rows and rows[-1].final_density == dens:
            rows[-1].tie = True
            rows.append(CompareRow(rows[-1].rank, d, policy, dens, tie=True))
        else:
            rows.append(CompareRow(i + 1, d, policy, dens))
    return rows


def format_compare(rows: list[CompareRow]) -> str:
    table = [[str(r.rank) + ("=" if r.tie else ""), r.directory, r.policy, f"{100 * r.final_density:.4f}%"]
             for r in rows]
    out = aligned(["rank", "campaign", "policy", "density"], table)
    if any(r.tie for r in rows):
        out += "tie: campaigns marked '=' reached identical density\n"
    return out
