"""Scenario files for the simulator.

A scenario is a TOML document::

    name = "dominant"

    [universe]
    n_branches = 20000
    edges = [[5, 1], [6, 5]]          # optional explicit child <- parent edges

    [[universe.arms]]                 # optional layered DAG generator
    range = [0, 8000]                 # branches lo..hi-1
    depth = 8                         # layers; layer k hangs off layer k-1

    [[fuzzers]]
    name = "alpha"
    rate = 4e-4                       # default per-branch rate (1 / CPU-second)
    rates = [{range = [0, 100], rate = 1e-3}]
    phases = [{start_frac = 0.5, end_frac = 1.0, multiplier = 0.1}]

Phase windows take absolute ``start``/``end`` seconds on the campaign
clock, or ``start_frac``/``end_frac`` of the campaign horizon.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from trendfuzz.bitmap import DEFAULT_MAP_SIZE
from trendfuzz.errors import ConfigError
from trendfuzz.sim.model import BranchUniverse, Phase, SimHarness, SimProfile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

BUILTIN = ("dominant", "inversion", "complementary", "uniform", "deadweight")


@dataclass
class Scenario:
    name: str
    universe: dict[str, Any]
    fuzzers: list[dict[str, Any]]
    description: str = ""
    source: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def fuzzer_names(self) -> list[str]:
        return [f["name"] for f in self.fuzzers]

    def build_universe(self, map_size: int = DEFAULT_MAP_SIZE) -> BranchUniverse:
        n = int(self.universe["n_branches"])
        edges = [tuple(e) for e in self.universe.get("edges", [])]
        for arm in self.universe.get("arms", []):
            edges += arm_edges(*arm["range"], int(arm["depth"]))
        return BranchUniverse(n, edges, map_size)

    def build_profiles(self, n_branches: int, horizon: float) -> list[SimProfile]:
        profiles = []
        for stream, f in enumerate(self.fuzzers):
            rates = np.full(n_branches, float(f.get("rate", 0.0)))
            for ov in f.get("rates", []):
                lo, hi = ov["range"]
                rates[lo:hi] = float(ov["rate"])
            phases = []
            for ph in f.get("phases", []):
                start = ph["start"] if "start" in ph else ph.get("start_frac", 0.0) * horizon
                end = ph["end"] if "end" in ph else ph.get("end_frac", 1.0) * horizon
                if "end" not in ph and ph.get("end_frac", 1.0) >= 1.0:
                    end = math.inf
                phases.append(Phase(float(start), float(end), float(ph["multiplier"])))
            profiles.append(SimProfile(f["name"], rates, phases, stream=stream))
        return profiles

    def build_harness(self, rng_seed: int, horizon: float, map_size: int = DEFAULT_MAP_SIZE) -> SimHarness:
        universe = self.build_universe(map_size)
        return SimHarness(universe, self.build_profiles(universe.n_branches, horizon), rng_seed)


def arm_edges(lo: int, hi: int, depth: int) -> list[tuple[int, int]]:
    """Split lo..hi-1 into ``depth`` layers; each branch depends on one branch of the layer above."""
    if depth < 1 or hi - lo < depth:
        raise ConfigError(f"arm {lo}..{hi} cannot hold {depth} layers")
    bounds = np.linspace(lo, hi, depth + 1).astype(int)
    layers = [list(range(a, b)) for a, b in zip(bounds, bounds[1:])]
    edges = []
    for upper, lower in zip(layers, layers[1:]):
        for i, child in enumerate(lower):
            edges.append((child, upper[i % len(upper)]))
    return edges


def _parse(data: dict[str, Any], source: str) -> Scenario:
    try:
        universe = data["universe"]
        fuzzers = data["fuzzers"]
        int(universe["n_branches"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario {source}: missing or bad {exc}") from exc
    if not fuzzers:
        raise ConfigError(f"scenario {source}: no fuzzers")
    names = [f.get("name") for f in fuzzers]
    if len(set(names)) != len(names) or None in names:
        raise ConfigError(f"scenario {source}: fuzzer names must be present and unique")
    extra = {k: v for k, v in data.items() if k not in ("name", "description", "universe", "fuzzers")}
    return Scenario(data.get("name", Path(source).stem), universe, fuzzers,
                    data.get("description", ""), source, extra)


def load_scenario(ref: str | os.PathLike) -> Scenario:
    """Load a built-in scenario by name or a scenario file by path."""
    ref_s = str(ref)
    if ref_s.lower() in BUILTIN:
        text = resources.files("trendfuzz.sim").joinpath("scenarios", f"{ref_s.lower()}.toml").read_text()
        source = ref_s.lower()
    else:
        path = Path(ref)
        if not path.exists():
            raise ConfigError(f"unknown scenario {ref_s!r} (built-ins: {', '.join(BUILTIN)})")
        text, source = path.read_text(), str(path)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario {source}: {exc}") from exc
    return _parse(data, source)


def scenario_library() -> dict[str, Scenario]:
    return {name: load_scenario(name) for name in BUILTIN}
