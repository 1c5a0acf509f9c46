"""CPU limiting for fuzzer instances.

Two backends:

* :class:`TimeSliceLimiter` does nothing on its own; the scheduler enforces
  shares by pausing and resuming fuzzers. Portable, and the default.
* :class:`CgroupLimiter` writes an exact ``cpu.max`` quota into a cgroup v2
  directory per fuzzer and moves the fuzzer's pids into it.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)


class ResourceLimiter:
    def apply(self, name: str, cores: float, pids: Iterable[int]) -> None:
        raise NotImplementedError

    def release(self, name: str) -> None:
        pass


class TimeSliceLimiter(ResourceLimiter):
    def __init__(self):
        self.quotas: dict[str, float] = {}

    def apply(self, name, cores, pids):
        self.quotas[name] = cores

    def release(self, name):
        self.quotas.pop(name, None)


class CgroupLimiter(ResourceLimiter):
    """cgroup v2 backend.

    ``root`` must be a delegated cgroup directory the campaign may write to.
    The quota for ``cores`` is ``cores * period`` microseconds per period.
    """

    def __init__(self, root: str | os.PathLike, period_us: int = 100_000):
        self.root = Path(root)
        self.period_us = period_us

    def group_path(self, name: str) -> Path:
        return self.root / f"trendfuzz-{name}"

    def quota_line(self, cores: float) -> str:
        if cores <= 0:
            # keep the group alive but starve it
            return f"1000 {self.period_us}"
        return f"{max(1000, round(cores * self.period_us))} {self.period_us}"

    def apply(self, name, cores, pids):
        group = self.group_path(name)
        group.mkdir(parents=True, exist_ok=True)
        (group / "cpu.max").write_text(self.quota_line(cores) + "\n")
        procs = group / "cgroup.procs"
        for pid in pids:
            try:
                with open(procs, "a") as fh:
                    fh.write(f"{pid}\n")
            except OSError as exc:
                log.warning("could not move pid %d into %s: %s", pid, group, exc)

    def release(self, name):
        group = self.group_path(name)
        cpu_max = group / "cpu.max"
        if cpu_max.exists():
            cpu_max.write_text(f"max {self.period_us}\n")
