"""Two-phase trend scheduler.

Each round: sync seeds, run a preparation phase that gives every fuzzer
short equal slices until one clearly pulls ahead (or the prep budget is
spent), allocate the focus budget from the measured trends, adjust the
early-exit threshold AIMD-style, sync again and run the focus phase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from trendfuzz.adapter import FuzzerHandle, FuzzerState, instances_for
from trendfuzz.bitmap import CoverageBitmap, count, density, intersect_all, subtract, union_into
from trendfuzz.errors import AdapterError, CampaignAborted, ConfigError, UnsupportedScalingError

log = logging.getLogger(__name__)

TREND = "trend"
ROUND_ROBIN = "roundrobin"
POLICIES = (TREND, ROUND_ROBIN)

# remaining prep time below this is treated as spent
RESIDUE = 1.0
SUM_TOL = 1e-9


@dataclass
class ScheduleConfig:
    t_prep: float = 300.0
    t_focus: float = 300.0
    theta_init: float = 100.0
    cores: int = 1
    slice: float = 30.0
    total_budget: float = 24 * 3600.0
    policy: str = TREND
    diff_peak_source: str = "raw"
    subtract_mode: str = "bits"
    count_granularity: str = "entries"
    seed_sync: bool = True
    min_slot: float = 1.0

    def __post_init__(self):
        self.policy = self.policy.lower().replace("-", "").replace("_", "")
        for name in ("t_prep", "t_focus", "theta_init", "slice", "total_budget"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.cores) != self.cores or self.cores < 1:
            raise ConfigError(f"cores must be a positive integer, got {self.cores}")
        self.cores = int(self.cores)
        if self.slice > self.t_prep:
            raise ConfigError(f"slice ({self.slice}) must not exceed t_prep ({self.t_prep})")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.diff_peak_source not in ("raw", "unique"):
            raise ConfigError(f"diff_peak_source must be 'raw' or 'unique', got {self.diff_peak_source!r}")
        if self.subtract_mode not in ("bits", "entries"):
            raise ConfigError(f"subtract_mode must be 'bits' or 'entries', got {self.subtract_mode!r}")
        if self.count_granularity not in ("entries", "bits"):
            raise ConfigError(f"count_granularity must be 'entries' or 'bits', got {self.count_granularity!r}")


@dataclass
class SchedulerState:
    theta_cur: float
    round: int = 1
    elapsed_cpu: float = 0.0
    rng_seed: int = 0
    clock_time: float = 0.0


@dataclass
class PrepOutcome:
    exit_early: bool
    t_remain: float
    diff_peak: int = 0
    t_prep_actual: float = 0.0
    sweeps: int = 0
    per_fuzzer_unique: dict[str, int] = field(default_factory=dict)
    winners: list[str] = field(default_factory=list)


@dataclass
class ResourceAllocation:
    fractions: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.fractions.get(name, 0.0)

    def total(self) -> float:
        return math.fsum(self.fractions.values())


@dataclass
class RoundRecord:
    round: int
    winner: str
    diff_peak: int
    theta: float
    t_prep_actual: float
    t_focus_assigned: float
    allocation: dict[str, float]
    counts: dict[str, int]
    exit_early: bool = False
    focus_cpu: dict[str, float] = field(default_factory=dict)
    elapsed_cpu: float = 0.0

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "winner": self.winner,
            "diff_peak": self.diff_peak,
            "theta": self.theta,
            "t_prep_actual": self.t_prep_actual,
            "t_focus_assigned": self.t_focus_assigned,
            "allocation": self.allocation,
            "counts": self.counts,
            "exit_early": self.exit_early,
            "focus_cpu": self.focus_cpu,
            "elapsed_cpu": self.elapsed_cpu,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RoundRecord":
        return cls(**d)


@dataclass
class CampaignResult:
    rounds: list[RoundRecord]
    bitmaps: dict[str, CoverageBitmap]
    elapsed_cpu: float
    aborted: bool = False
    failed: list[str] = field(default_factory=list)

    @property
    def union(self) -> CoverageBitmap:
        bitmaps = list(self.bitmaps.values())
        out = bitmaps[0]
        for b in bitmaps[1:]:
            out = union_into(out, b)
        return out

    @property
    def final_density(self) -> float:
        return density(self.union)

    def focus_cpu_totals(self) -> dict[str, float]:
        totals = {name: 0.0 for name in self.bitmaps}
        for r in self.rounds:
            for name, secs in r.focus_cpu.items():
                totals[name] = totals.get(name, 0.0) + secs
        return totals


# pure pieces


def aimd_update(state: SchedulerState, exit_early: bool, theta_init: float) -> float:
    """Additive increase on early exit, halve otherwise."""
    state.theta_cur = state.theta_cur + theta_init if exit_early else state.theta_cur * 0.5
    return state.theta_cur


def unique_counts(bitmaps: dict[str, CoverageBitmap], subtract_mode: str = "bits",
                  granularity: str = "entries") -> dict[str, int]:
    """Per fuzzer, how much of its bitmap is not shared by every fuzzer."""
    common = intersect_all(bitmaps.values())
    return {name: count(subtract(b, common, subtract_mode), granularity) for name, b in bitmaps.items()}


def diff_peak(bitmaps: dict[str, CoverageBitmap], source: str = "raw", subtract_mode: str = "bits",
              granularity: str = "entries") -> int:
    """Best count minus worst count across fuzzers."""
    if source == "unique":
        counts = unique_counts(bitmaps, subtract_mode, granularity)
    else:
        counts = {name: count(b, granularity) for name, b in bitmaps.items()}
    return max(counts.values()) - min(counts.values())


def resource_allocator(bitmaps: dict[str, CoverageBitmap], exit_early: bool, subtract_mode: str = "bits",
                       granularity: str = "entries") -> ResourceAllocation:
    """Winner-takes-all on early exit, otherwise shares proportional to unique coverage.

    With no unique coverage at all the proportional branch falls back to an
    equal split.
    """
    u = unique_counts(bitmaps, subtract_mode, granularity)
    names = list(bitmaps)
    if exit_early:
        best = max(u.values())
        winners = [n for n in names if u[n] == best]
        return ResourceAllocation({n: (1.0 / len(winners) if n in winners else 0.0) for n in names})
    total = sum(u.values())
    if total == 0:
        return ResourceAllocation({n: 1.0 / len(names) for n in names})
    return ResourceAllocation({n: u[n] / total for n in names})


def prep_loop(run_sweep: Callable[[float], None], measure: Callable[[], int],
              t_prep: float, theta_cur: float, slice_len: float = 30.0) -> PrepOutcome:
    """Sweep all fuzzers in ``slice_len`` chunks until diff_peak exceeds ``theta_cur``.

    ``run_sweep(t)`` runs every fuzzer for ``t`` seconds; ``measure()``
    returns the current diff_peak.
    """
    t_remain = float(t_prep)
    peak, sweeps = 0, 0
    while t_remain >= RESIDUE:
        t_run = min(t_remain, slice_len)
        run_sweep(t_run)
        sweeps += 1
        t_remain -= t_run
        peak = measure()
        if peak > theta_cur:
            return PrepOutcome(True, t_remain, peak, t_prep - t_remain, sweeps)
    return PrepOutcome(False, 0.0, peak, float(t_prep), sweeps)


def focus_plan(allocation: ResourceAllocation, t_focus: float, n_fuzzers: int,
               min_slot: float = 1.0) -> list[tuple[str, float]]:
    """Single-core focus schedule: (fuzzer, seconds) in descending share order.

    The pool is ``t_focus * n_fuzzers``. Slots shorter than ``min_slot`` are
    dropped and their time goes to the largest slot.
    """
    total = t_focus * n_fuzzers
    order = sorted(allocation.fractions.items(), key=lambda kv: -kv[1])
    slots = [(name, total * frac) for name, frac in order]
    folded = sum(t for _, t in slots if 0 < t < min_slot)
    slots = [(name, t) for name, t in slots if t >= min_slot]
    if slots and folded:
        name, t = slots[0]
        slots[0] = (name, t + folded)
    return slots


# the control loop


class Scheduler:
    """Drives fuzzers through rounds on a clock.

    ``telemetry`` receives ``round(record)`` and ``coverage(elapsed, snapshot)``
    calls; ``syncer`` is a :class:`trendfuzz.sync.SeedSync`.
    """

    def __init__(self, config: ScheduleConfig, fuzzers: Sequence[FuzzerHandle], clock, syncer,
                 telemetry=None, state: SchedulerState | None = None, target: str = "", seeds_dir: str = ""):
        if not fuzzers:
            raise ConfigError("a campaign needs at least one fuzzer")
        self.config = config
        self.fuzzers = list(fuzzers)
        self.clock = clock
        self.syncer = syncer
        self.telemetry = telemetry
        self.state = state or SchedulerState(theta_cur=config.theta_init)
        self.target = target
        self.seeds_dir = seeds_dir
        self.rounds: list[RoundRecord] = []

    # helpers

    @property
    def live(self) -> list[FuzzerHandle]:
        return [f for f in self.fuzzers if not f.failed]

    def _mark_failed(self, f: FuzzerHandle, why) -> None:
        if not f.failed:
            log.error("fuzzer %s failed: %s", f.name, why)
        f.failed = True
        try:
            f.stop()
        except Exception:  # best effort on an already broken fuzzer
            log.exception("stopping failed fuzzer %s", f.name)

    def _check_alive(self, f: FuzzerHandle) -> None:
        if not f.failed and not f.alive():
            self._mark_failed(f, "process died")

    def harvest(self, fuzzers: Sequence[FuzzerHandle] | None = None) -> None:
        for f in self.fuzzers if fuzzers is None else fuzzers:
            f.harvest()

    def bitmaps(self) -> dict[str, CoverageBitmap]:
        return {f.name: f.bitmap for f in self.fuzzers}

    def trend_snapshot(self) -> dict[str, tuple[int, float]]:
        out = {}
        for f in self.fuzzers:
            b = f.bitmap
            out[f.name] = (count(b, self.config.count_granularity), density(b))
        return out

    def _emit_coverage(self) -> None:
        if self.telemetry is not None:
            self.telemetry.coverage(self.state.elapsed_cpu, self.trend_snapshot(), union_into_all(self.bitmaps()))

    def sync(self, just_ran: FuzzerHandle | None = None) -> None:
        if not self.config.seed_sync:
            return
        if just_ran is None:
            self.syncer.sync_all(self.fuzzers)
        else:
            self.syncer.sync_after_focus_run(just_ran, self.fuzzers)
        self.harvest()

    def start_all(self) -> None:
        for f in self.fuzzers:
            if f.state is not FuzzerState.STOPPED or f.failed:
                continue
            try:
                f.start(self.target, self.seeds_dir)
                f.pause()
            except AdapterError as exc:
                self._mark_failed(f, exc)

    def stop_all(self) -> None:
        for f in self.fuzzers:
            f.stop()

    def _run_one(self, f: FuzzerHandle, seconds: float, cores: float = 1.0) -> None:
        if f.failed:
            return
        f.resume(cores)
        self.clock.sleep(seconds, poll=f.harvest)
        f.pause()
        f.harvest()
        self._check_alive(f)

    def _run_parallel(self, shares: dict[FuzzerHandle, float], seconds: float) -> None:
        running = [f for f, c in shares.items() if c > 0 and not f.failed]
        for f in running:
            f.resume(shares[f])
        self.clock.sleep(seconds, poll=lambda: self.harvest(running))
        for f in running:
            f.pause()
        self.harvest(running)
        for f in running:
            self._check_alive(f)

    def _scale(self, f: FuzzerHandle, n: int) -> None:
        if f.failed or n == 0:
            return
        try:
            f.scale_to(n)
        except UnsupportedScalingError as exc:
            log.warning("%s", exc)
        except AdapterError as exc:
            self._mark_failed(f, exc)

    # phases

    def prep_phase(self) -> PrepOutcome:
        cfg = self.config
        n = len(self.fuzzers)

        def sweep(t_run: float) -> None:
            if cfg.cores == 1:
                for f in self.fuzzers:
                    self._run_one(f, t_run)
                self.state.elapsed_cpu += n * t_run
            else:
                self._run_parallel({f: cfg.cores / n for f in self.fuzzers}, t_run)
                self.state.elapsed_cpu += cfg.cores * t_run
            self._emit_coverage()

        def measure() -> int:
            return diff_peak(self.bitmaps(), cfg.diff_peak_source, cfg.subtract_mode, cfg.count_granularity)

        outcome = prep_loop(sweep, measure, cfg.t_prep, self.state.theta_cur, cfg.slice)
        u = unique_counts(self.bitmaps(), cfg.subtract_mode, cfg.count_granularity)
        outcome.per_fuzzer_unique = u
        if outcome.exit_early:
            best = max(u.values())
            outcome.winners = [name for name, v in u.items() if v == best]
        return outcome

    def focus_phase(self, allocation: ResourceAllocation, t_focus: float) -> dict[str, float]:
        """Run the focus phase; returns focus CPU seconds per fuzzer."""
        cfg = self.config
        before = {f.name: f.cpu_time_consumed for f in self.fuzzers}
        if cfg.cores == 1:
            by_name = {f.name: f for f in self.fuzzers}
            # the pool is charged as a whole so per-slot rounding cannot drift the budget
            self.state.elapsed_cpu += t_focus * len(self.fuzzers)
            for name, seconds in focus_plan(allocation, t_focus, len(self.fuzzers), cfg.min_slot):
                f = by_name[name]
                if f.failed:
                    log.warning("%s is down; its %.0fs focus slot is forfeited", name, seconds)
                    continue
                self._run_one(f, seconds)
                self.sync(just_ran=f)
                self._emit_coverage()
        else:
            shares = {f: cfg.cores * allocation[f.name] for f in self.fuzzers}
            for f, c in shares.items():
                self._scale(f, instances_for(cfg.cores, allocation[f.name]))
            self._run_parallel(shares, t_focus)
            self.state.elapsed_cpu += cfg.cores * t_focus
            for f in self.fuzzers:
                self._scale(f, 1)
            self.sync()
            self._emit_coverage()
        return {f.name: f.cpu_time_consumed - before[f.name] for f in self.fuzzers}

    def run_round(self) -> RoundRecord:
        cfg = self.config
        theta = self.state.theta_cur
        if hasattr(self.syncer, "round"):
            self.syncer.round = self.state.round
        self.sync()
        if cfg.policy == ROUND_ROBIN:
            names = [f.name for f in self.fuzzers]
            allocation = ResourceAllocation({name: 1.0 / len(names) for name in names})
            outcome = PrepOutcome(False, 0.0)
            t_focus = cfg.t_prep + cfg.t_focus
            prep_time = 0.0
        else:
            outcome = self.prep_phase()
            allocation = resource_allocator(self.bitmaps(), outcome.exit_early, cfg.subtract_mode,
                                            cfg.count_granularity)
            aimd_update(self.state, outcome.exit_early, cfg.theta_init)
            t_focus = cfg.t_focus + outcome.t_remain
            prep_time = outcome.t_prep_actual
        self.sync()
        focus_cpu = self.focus_phase(allocation, t_focus)
        counts = {name: c for name, (c, _) in self.trend_snapshot().items()}
        record = RoundRecord(
            round=self.state.round,
            winner=",".join(outcome.winners) if outcome.exit_early else "None",
            diff_peak=int(outcome.diff_peak),
            theta=theta,
            t_prep_actual=prep_time,
            t_focus_assigned=t_focus,
            allocation=dict(allocation.fractions),
            counts=counts,
            exit_early=outcome.exit_early,
            focus_cpu={k: round(v, 6) for k, v in focus_cpu.items()},
            elapsed_cpu=self.state.elapsed_cpu,
        )
        self.rounds.append(record)
        self.state.round += 1
        self.state.clock_time = self.clock.now()
        if self.telemetry is not None:
            self.telemetry.round(record, self.state)
        return record

    def run(self) -> CampaignResult:
        self.start_all()
        aborted = False
        try:
            while self.state.elapsed_cpu < self.config.total_budget:
                if not self.live:
                    raise CampaignAborted("every fuzzer has failed")
                self.run_round()
        except CampaignAborted as exc:
            log.error("campaign aborted: %s", exc)
            aborted = True
        finally:
            self.stop_all()
            self.harvest()
        return CampaignResult(self.rounds, self.bitmaps(), self.state.elapsed_cpu, aborted,
                              [f.name for f in self.fuzzers if f.failed])


def union_into_all(bitmaps: dict[str, CoverageBitmap]) -> CoverageBitmap:
    it = iter(bitmaps.values())
    out = next(it)
    for b in it:
        out = union_into(out, b)
    return out


def run_campaign(config: ScheduleConfig, fuzzers: Sequence[FuzzerHandle], clock, syncer,
                 telemetry=None, **kw) -> CampaignResult:
    return Scheduler(config, fuzzers, clock, syncer, telemetry, **kw).run()
