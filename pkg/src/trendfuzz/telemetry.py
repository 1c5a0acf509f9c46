"""Campaign telemetry files.

``rounds.jsonl``  one JSON object per round (see :class:`RoundRecord`)
``coverage.csv``  cpu_seconds,fuzzer,count,density after every run slice;
                  the ``_union`` rows track the whole ensemble
``state.json``    scheduler state for resuming
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from trendfuzz.bitmap import CoverageBitmap, count, density
from trendfuzz.errors import FormatError
from trendfuzz.scheduler import RoundRecord, SchedulerState

ROUNDS_FILE = "rounds.jsonl"
COVERAGE_FILE = "coverage.csv"
STATE_FILE = "state.json"
COVERAGE_COLUMNS = ["cpu_seconds", "fuzzer", "count", "density"]
UNION = "_union"


class TelemetryWriter:
    def __init__(self, output_dir: str | os.PathLike, fresh: bool = True):
        self.dir = Path(output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.rounds_path = self.dir / ROUNDS_FILE
        self.coverage_path = self.dir / COVERAGE_FILE
        self.state_path = self.dir / STATE_FILE
        if fresh:
            self.rounds_path.write_text("")
            with open(self.coverage_path, "w", newline="") as fh:
                csv.writer(fh).writerow(COVERAGE_COLUMNS)

    def round(self, record: RoundRecord, state: SchedulerState) -> None:
        with open(self.rounds_path, "a") as fh:
            fh.write(json.dumps(record.to_json(), sort_keys=False) + "\n")
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state.__dict__))
        os.replace(tmp, self.state_path)

    def coverage(self, elapsed: float, snapshot: dict[str, tuple[int, float]], union: CoverageBitmap) -> None:
        with open(self.coverage_path, "a", newline="") as fh:
            w = csv.writer(fh)
            for name, (c, d) in snapshot.items():
                w.writerow([f"{elapsed:g}", name, c, f"{d:.6f}"])
            w.writerow([f"{elapsed:g}", UNION, count(union), f"{density(union):.6f}"])


def read_rounds(output_dir: str | os.PathLike) -> list[RoundRecord]:
    path = Path(output_dir) / ROUNDS_FILE
    if not path.exists():
        raise FileNotFoundError(f"no {ROUNDS_FILE} in {output_dir}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(RoundRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def read_state(output_dir: str | os.PathLike) -> SchedulerState | None:
    path = Path(output_dir) / STATE_FILE
    if not path.exists():
        return None
    return SchedulerState(**json.loads(path.read_text()))
