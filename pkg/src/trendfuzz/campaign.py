"""Wires a CampaignConfig into fuzzers, oracle, sync and telemetry, and runs it."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

from trendfuzz import bitmap as bm
from trendfuzz.adapter import FuzzerSpec, ProcessFuzzer
from trendfuzz.clock import VirtualClock, WallClock
from trendfuzz.config import CampaignConfig
from trendfuzz.errors import ConfigError
from trendfuzz.limiter import CgroupLimiter, TimeSliceLimiter
from trendfuzz.monitor import ExecutionCache
from trendfuzz.oracle import InstrumentedBinaryOracle
from trendfuzz.scheduler import CampaignResult, Scheduler, SchedulerState
from trendfuzz.sim.fuzzer import SimFuzzer, SimOracle
from trendfuzz.sim.scenarios import load_scenario
from trendfuzz.sync import SeedIndex, SeedSync
from trendfuzz.telemetry import COVERAGE_FILE, ROUNDS_FILE, STATE_FILE, UNION, TelemetryWriter, read_state

log = logging.getLogger(__name__)

BITMAP_DIR = "bitmaps"
MONITOR_DIR = "monitor"
SEED_INDEX_FILE = "seed_index.jsonl"
SUMMARY_FILE = "summary.json"


@dataclass
class Campaign:
    config: CampaignConfig
    scheduler: Scheduler
    output_dir: Path
    harness: object = None
    previous_rounds: int = 0

    @property
    def fuzzers(self):
        return self.scheduler.fuzzers

    def run(self) -> CampaignResult:
        monitors = []
        if self.config.mode == "exec":
            for f in self.fuzzers:
                f.monitor.start_background(self.config.poll_interval)
                monitors.append(f.monitor)
        try:
            result = self.scheduler.run()
        finally:
            for m in monitors:
                m.stop_background()
        self.save(result)
        return result

    def save(self, result: CampaignResult) -> None:
        out = self.output_dir / BITMAP_DIR
        for name, b in result.bitmaps.items():
            bm.save(b, out / f"{name}.bitmap")
        union = result.union
        bm.save(union, out / f"{UNION}.bitmap")
        summary = {
            "mode": self.config.mode,
            "scenario": self.config.scenario,
            "policy": self.config.schedule.policy,
            "rng_seed": self.config.rng_seed,
            "rounds": len(self.scheduler.rounds) + self.previous_rounds,
            "elapsed_cpu": result.elapsed_cpu,
            "final_count": bm.count(union),
            "final_density": bm.density(union),
            "aborted": result.aborted,
            "failed": result.failed,
        }
        (self.output_dir / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n")


class CheckpointingTelemetry(TelemetryWriter):
    """Telemetry that also saves every fuzzer bitmap after each round.

    Monitor logs record which corpus files were already executed; saving the
    bitmaps at the same point keeps a resumed campaign from losing the
    coverage those files contributed.
    """

    bitmap_source = None

    def round(self, record, state) -> None:
        if self.bitmap_source is not None:
            for name, b in self.bitmap_source().items():
                bm.save(b, self.dir / BITMAP_DIR / f"{name}.bitmap")
        super().round(record, state)


def _clean(output_dir: Path, names: list[str]) -> None:
    """Remove artifacts of an earlier campaign in ``output_dir`` (and nothing else)."""
    for fname in (ROUNDS_FILE, COVERAGE_FILE, STATE_FILE, SEED_INDEX_FILE, SUMMARY_FILE):
        (output_dir / fname).unlink(missing_ok=True)
    for d in [BITMAP_DIR, MONITOR_DIR, *names]:
        shutil.rmtree(output_dir / d, ignore_errors=True)


def build_campaign(config: CampaignConfig, resume: bool = False) -> Campaign:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = config.schedule
    harness = None

    if config.mode == "sim":
        scenario = load_scenario(config.scenario)
        harness = scenario.build_harness(config.rng_seed, sched.total_budget / sched.cores, config.map_size)
        specs = config.fuzzers or [FuzzerSpec(name) for name in scenario.fuzzer_names]
        unknown = [s.name for s in specs if s.name not in harness.profiles]
        if unknown:
            raise ConfigError(f"fuzzers {unknown} have no profile in scenario {scenario.name}")
        clock = VirtualClock()
        oracle = SimOracle(harness)
    else:
        specs = config.fuzzers
        clock = WallClock(config.poll_interval)
        oracle = InstrumentedBinaryOracle(config.target.argv, config.target.timeout, config.map_size,
                                          config.target.stdin, dict(config.target.env))

    state = read_state(out) if resume else None
    if not resume:
        _clean(out, [s.name for s in specs])
    elif state is not None and config.mode == "sim":
        clock = VirtualClock(state.clock_time)

    if config.limiter.kind == "cgroup":
        limiter = CgroupLimiter(config.limiter.cgroup_root, config.limiter.period_us)
    else:
        limiter = TimeSliceLimiter()

    cache = ExecutionCache(oracle)
    fuzzers = []
    for spec in specs:
        common = dict(clock=clock, map_size=config.map_size, limiter=limiter)
        if config.mode == "sim":
            f = SimFuzzer(spec, out, harness, **common)
        else:
            f = ProcessFuzzer(spec, out, grace_period=config.grace_period, **common)
        f.attach_monitor(cache, out / MONITOR_DIR / f"{spec.name}.jsonl")
        if resume:
            saved = out / BITMAP_DIR / f"{spec.name}.bitmap"
            if saved.exists():
                f.restore_bitmap(bm.load(saved, config.map_size))
        fuzzers.append(f)

    syncer = SeedSync(SeedIndex(out / SEED_INDEX_FILE))
    telemetry = CheckpointingTelemetry(out, fresh=not resume or state is None)
    if state is None:
        state = SchedulerState(theta_cur=sched.theta_init, rng_seed=config.rng_seed)
    scheduler = Scheduler(sched, fuzzers, clock, syncer, telemetry, state=state,
                          target=config.target.path or (config.target.argv[0] if config.target.argv else ""),
                          seeds_dir=config.target.seeds)
    telemetry.bitmap_source = scheduler.bitmaps
    return Campaign(config, scheduler, out, harness, previous_rounds=state.round - 1)


def run_from_config(config: CampaignConfig, resume: bool = False) -> CampaignResult:
    return build_campaign(config, resume).run()
