"""Synthetic fuzzing model.

A target is a universe of branches, optionally gated by a DAG (a branch
becomes reachable once all its parents are covered). A simulated fuzzer
discovers each reachable branch after an exponentially distributed amount
of CPU time with a per-branch rate, scaled by a time-windowed multiplier.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from trendfuzz.bitmap import DEFAULT_MAP_SIZE
from trendfuzz.errors import ConfigError, FormatError

SEED_MAGIC = b"TFSIM1\n"


@dataclass(frozen=True)
class SimSeed:
    """Input that covers exactly ``branches``. Equal sets encode to equal bytes."""

    branches: frozenset[int]

    def encode(self) -> bytes:
        ids = sorted(self.branches)
        return SEED_MAGIC + struct.pack(f"<{len(ids)}I", *ids)

    @classmethod
    def decode(cls, data: bytes) -> "SimSeed":
        if not data.startswith(SEED_MAGIC) or (len(data) - len(SEED_MAGIC)) % 4:
            raise FormatError("not a simulated seed")
        body = data[len(SEED_MAGIC):]
        return cls(frozenset(struct.unpack(f"<{len(body) // 4}I", body)))


class BranchUniverse:
    def __init__(self, n_branches: int, edges: Iterable[tuple[int, int]] = (), map_size: int = DEFAULT_MAP_SIZE):
        if not 0 < n_branches <= map_size:
            raise ConfigError(f"n_branches must be in 1..{map_size}, got {n_branches}")
        self.n_branches = n_branches
        self.map_size = map_size
        edges = sorted(set((int(c), int(p)) for c, p in edges))
        for c, p in edges:
            if not (0 <= c < n_branches and 0 <= p < n_branches) or c == p:
                raise ConfigError(f"bad DAG edge {c} <- {p}")
        self.edge_child = np.array([c for c, _ in edges], dtype=np.int64)
        self.edge_parent = np.array([p for _, p in edges], dtype=np.int64)
        self.parents: dict[int, tuple[int, ...]] = {}
        self.children: dict[int, list[int]] = {}
        for c, p in edges:
            self.parents.setdefault(c, ())
            self.parents[c] += (p,)
            self.children.setdefault(p, []).append(c)
        self._ancestors: dict[int, frozenset[int]] = {}
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        indeg = np.bincount(self.edge_child, minlength=self.n_branches)
        stack = [b for b in range(self.n_branches) if indeg[b] == 0]
        seen = 0
        while stack:
            b = stack.pop()
            seen += 1
            for c in self.children.get(b, ()):
                indeg[c] -= 1
                if indeg[c] == 0:
                    stack.append(c)
        if seen != self.n_branches:
            raise ConfigError("branch dependency graph has a cycle")

    def uncovered_parent_counts(self, covered: np.ndarray) -> np.ndarray:
        if not self.edge_child.size:
            return np.zeros(self.n_branches, dtype=np.int64)
        mask = ~covered[self.edge_parent]
        return np.bincount(self.edge_child[mask], minlength=self.n_branches)

    def reachable(self, covered: np.ndarray) -> np.ndarray:
        """Uncovered branches whose parents are all covered."""
        return ~covered & (self.uncovered_parent_counts(covered) == 0)

    def path_to(self, branch: int) -> frozenset[int]:
        """``branch`` plus all its transitive ancestors."""
        cache = self._ancestors
        if branch in cache:
            return cache[branch]
        todo, out = [branch], {branch}
        while todo:
            b = todo.pop()
            for p in self.parents.get(b, ()):
                if p in cache:
                    out |= cache[p]
                elif p not in out:
                    out.add(p)
                    todo.append(p)
        cache[branch] = frozenset(out)
        return cache[branch]


@dataclass(frozen=True)
class Phase:
    """Rate multiplier active for campaign time in [start, end)."""

    start: float
    end: float
    multiplier: float


@dataclass
class SimProfile:
    name: str
    rates: np.ndarray
    phases: list[Phase] = field(default_factory=list)
    stream: int = 0

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if (self.rates < 0).any():
            raise ConfigError(f"profile {self.name}: negative discovery rate")
        for ph in self.phases:
            if ph.multiplier < 0 or ph.end <= ph.start:
                raise ConfigError(f"profile {self.name}: bad phase {ph}")

    def multiplier_at(self, t: float) -> float:
        m = 1.0
        for ph in self.phases:
            if ph.start <= t < ph.end:
                m *= ph.multiplier
        return m

    def boundaries(self) -> list[float]:
        return sorted({x for ph in self.phases for x in (ph.start, ph.end)})


def sim_execute(seed: SimSeed, map_size: int = DEFAULT_MAP_SIZE) -> np.ndarray:
    """Raw hit map of a simulated execution: count 1 at every covered branch."""
    raw = np.zeros(map_size, dtype=np.uint8)
    if seed.branches:
        raw[np.fromiter(seed.branches, dtype=np.int64)] = 1
    return raw


class SimHarness:
    """Holds the universe, the profiles and the ground truth of what was found.

    Randomness for the k-th step of a fuzzer comes from a generator seeded
    with ``(rng_seed, profile.stream, k)``, so outputs depend only on the
    campaign seed and the history of calls.
    """

    def __init__(self, universe: BranchUniverse, profiles: Sequence[SimProfile], rng_seed: int = 0):
        self.universe = universe
        self.profiles = {p.name: p for p in profiles}
        for p in profiles:
            if p.rates.shape != (universe.n_branches,):
                raise ConfigError(f"profile {p.name}: expected {universe.n_branches} rates, got {p.rates.shape}")
        self.rng_seed = int(rng_seed)
        self.steps: dict[str, int] = {name: 0 for name in self.profiles}
        self.discovered = np.zeros(universe.n_branches, dtype=bool)

    @property
    def map_size(self) -> int:
        return self.universe.map_size

    def covered_mask(self, seeds: Iterable[SimSeed]) -> np.ndarray:
        mask = np.zeros(self.universe.n_branches, dtype=bool)
        for s in seeds:
            if s.branches:
                mask[np.fromiter(s.branches, dtype=np.int64)] = True
        return mask

    def sim_step(self, fuzzer: str, cpu_seconds: float, visible: np.ndarray | Iterable[SimSeed],
                 start_time: float = 0.0, cores: float = 1.0) -> list[SimSeed]:
        """Run ``fuzzer`` for ``cpu_seconds``; returns the seed for the new coverage, if any.

        The seed covers every branch found in this step plus the branches on
        the way to them, so importing it teaches another fuzzer the paths.

        ``visible`` is the coverage the fuzzer can build on (its own and
        imported seeds), as a boolean mask or a seed iterable. Phase windows
        are evaluated on the campaign clock starting at ``start_time``;
        ``cores`` converts CPU time to clock time.
        """
        profile = self.profiles[fuzzer]
        k = self.steps[fuzzer]
        self.steps[fuzzer] = k + 1
        rng = np.random.default_rng([self.rng_seed, profile.stream, k])
        if isinstance(visible, np.ndarray):
            covered = visible.astype(bool).copy()
        else:
            covered = self.covered_mask(visible)
        if cpu_seconds <= 0 or not profile.rates.any():
            return []

        wall = cpu_seconds / cores
        cuts = [start_time] + [b for b in profile.boundaries() if start_time < b < start_time + wall] + [start_time + wall]
        found: list[int] = []
        for t0, t1 in zip(cuts, cuts[1:]):
            m = profile.multiplier_at(t0)
            if m > 0:
                found += self._segment(profile.rates * m, (t1 - t0) * cores, covered, rng)
        if not found:
            return []
        self.discovered[np.array(found)] = True
        branches: set[int] = set()
        for b in found:
            branches |= self.universe.path_to(b)
        return [SimSeed(frozenset(branches))]

    def _segment(self, rates: np.ndarray, budget: float, covered: np.ndarray, rng: np.random.Generator) -> list[int]:
        u = self.universe
        cand = np.flatnonzero(u.reachable(covered) & (rates > 0))
        times = rng.exponential(size=cand.size) / rates[cand]
        heap = [(float(t), int(b)) for t, b in zip(times, cand) if t < budget]
        heapq.heapify(heap)
        found = []
        while heap:
            t, b = heapq.heappop(heap)
            if covered[b]:
                continue
            covered[b] = True
            found.append(b)
            for c in u.children.get(b, ()):
                if covered[c] or rates[c] <= 0:
                    continue
                if all(covered[p] for p in u.parents[c]):
                    tc = t + rng.exponential() / rates[c]
                    if tc < budget:
                        heapq.heappush(heap, (tc, c))
        return found

    def sim_execute(self, seed: SimSeed) -> np.ndarray:
        return sim_execute(seed, self.map_size)
