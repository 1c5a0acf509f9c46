"""Simulated adapter: a FuzzerHandle backed by the harness instead of a process."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from trendfuzz.adapter import FuzzerHandle, FuzzerSpec
from trendfuzz.errors import FormatError
from trendfuzz.monitor import iter_corpus
from trendfuzz.oracle import ExecutionOracle, OracleFailure
from trendfuzz.sim.model import SimHarness, SimSeed, sim_execute


class SimOracle(ExecutionOracle):
    """Executes simulated seed files; anything else fails like a crashing input."""

    def __init__(self, harness: SimHarness):
        self.harness = harness
        self.map_size = harness.map_size
        self.calls = 0

    def execute(self, path: Path) -> np.ndarray:
        self.calls += 1
        try:
            seed = SimSeed.decode(Path(path).read_bytes())
        except (FormatError, OSError) as exc:
            raise OracleFailure(f"{path}: {exc}") from exc
        return sim_execute(seed, self.map_size)


class SimFuzzer(FuzzerHandle):
    """Runs the harness for the CPU time accumulated between resume and pause.

    What the fuzzer can build on is read back from its own corpus
    directories, so seeds imported by sync widen its reachable branches
    exactly as they would for a real fuzzer.
    """

    def __init__(self, spec: FuzzerSpec, workdir, harness: SimHarness, **kw):
        kw.setdefault("map_size", harness.map_size)
        super().__init__(spec, workdir, **kw)
        self.harness = harness
        self._known = np.zeros(harness.universe.n_branches, dtype=bool)
        self._read: set[str] = set()
        self._next_id = 0

    @property
    def state_path(self) -> Path:
        return self.out_dir / ".simstate.json"

    def supports_scaling(self) -> bool:
        return True

    def _spawn(self, instance_id: int) -> int:
        if instance_id == 0 and self.state_path.exists():
            st = json.loads(self.state_path.read_text())
            self._next_id = st["next_id"]
            self.harness.steps[self.name] = st["steps"]
        return instance_id

    def _refresh_known(self) -> None:
        for p in iter_corpus(self.corpus_paths):
            key = str(p)
            if key in self._read:
                continue
            self._read.add(key)
            try:
                seed = SimSeed.decode(p.read_bytes())
            except (FormatError, OSError):
                continue
            if seed.branches:
                self._known[np.fromiter(seed.branches, dtype=np.int64)] = True

    def known_branches(self) -> np.ndarray:
        self._refresh_known()
        return self._known.copy()

    def _close_interval(self) -> float:
        start, cores = self._running_since, self._cores
        spent = super()._close_interval()
        if start is None or spent <= 0:
            return spent
        self._refresh_known()
        seeds = self.harness.sim_step(self.name, spent, self._known, start_time=start, cores=cores)
        queue = self.interesting_paths[0]
        queue.mkdir(parents=True, exist_ok=True)
        for seed in seeds:
            path = queue / f"id_{self._next_id:06d}"
            self._next_id += 1
            path.write_bytes(seed.encode())
            self._read.add(str(path))
            self._known[np.fromiter(seed.branches, dtype=np.int64)] = True
        self.state_path.write_text(json.dumps({"next_id": self._next_id, "steps": self.harness.steps[self.name]}))
        return spent
