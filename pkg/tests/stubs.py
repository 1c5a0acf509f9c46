"""Shared test doubles."""

from __future__ import annotations

import numpy as np

from trendfuzz.adapter import FuzzerHandle, FuzzerSpec
from trendfuzz.bitmap import CoverageBitmap
from trendfuzz.clock import VirtualClock


class StubFuzzer(FuzzerHandle):
    """A fuzzer with no process behind it; lifecycle bookkeeping only."""

    def __init__(self, name, workdir, scalable=False, **kw):
        spec = FuzzerSpec(name, scale_command=["scale"] if scalable else None)
        kw.setdefault("clock", VirtualClock())
        super().__init__(spec, workdir, **kw)
        self.spawned = 0
        self.terminated = 0

    def _spawn(self, instance_id):
        self.spawned += 1
        return instance_id

    def _terminate(self, inst):
        self.terminated += 1


def random_bitmap(rng: np.random.Generator, map_size: int = 256, density: float = 0.3) -> CoverageBitmap:
    """Bucketized-looking bitmap: each set entry holds a random non-empty bit pattern."""
    mask = rng.random(map_size) < density
    vals = rng.integers(1, 256, size=map_size, dtype=np.uint8)
    return CoverageBitmap(np.where(mask, vals, 0).astype(np.uint8))


def sim_config_text(scenario: str, output_dir, **keys) -> str:
    lines = ['mode = "sim"', f'scenario = "{scenario}"', f'output_dir = "{output_dir}"']
    for k, v in keys.items():
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, str):
            v = f'"{v}"'
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


class GrowingFuzzer(StubFuzzer):
    """Covers ``rate`` fresh entries per CPU-second from its own region of the map."""

    def __init__(self, name, workdir, rate, offset, map_size=4096, **kw):
        super().__init__(name, workdir, map_size=map_size, **kw)
        self.rate = rate
        self.offset = offset
        self.covered = 0.0

    def _close_interval(self):
        spent = super()._close_interval()
        self.covered += spent * self.rate
        n = int(self.covered)
        if n:
            idx = self.offset + np.arange(n)
            entries = np.zeros(self.accumulator.map_size, dtype=np.uint8)
            entries[idx[idx < self.accumulator.map_size]] = 1
            self.accumulator.add(CoverageBitmap(entries))
        return spent


class NullSync:
    round = 0

    def sync_all(self, fuzzers, kind="round"):
        return None

    def sync_after_focus_run(self, just_ran, others):
        return None
