"""Baseline fuzzer adapters.

Every fuzzer the orchestrator drives is a :class:`FuzzerHandle`: lifecycle
(start, stop, pause, resume), scaling, corpus directories and an
accumulated coverage bitmap fed by a :class:`CorpusMonitor`.
:class:`ProcessFuzzer` runs an external command; the simulator provides
another subclass.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import re
import signal
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from trendfuzz.bitmap import DEFAULT_MAP_SIZE, BitmapAccumulator, CoverageBitmap
from trendfuzz.clock import WallClock
from trendfuzz.errors import AdapterError, ConfigError, PreconditionError, UnsupportedScalingError
from trendfuzz.limiter import ResourceLimiter, TimeSliceLimiter
from trendfuzz.monitor import CorpusMonitor, ExecutionCache

log = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_EPS = 1e-9


@dataclass
class FuzzerSpec:
    name: str
    start_command: list[str] = field(default_factory=list)
    interesting_dirs: list[str] = field(default_factory=lambda: ["queue", "crashes", "hangs"])
    sync_dir: str = "sync"
    scale_command: list[str] | None = None

    def __post_init__(self):
        if not self.name or not re.fullmatch(r"[A-Za-z0-9_.+-]+", self.name):
            raise ConfigError(f"invalid fuzzer name {self.name!r}")
        if not self.interesting_dirs:
            raise ConfigError(f"fuzzer {self.name}: interesting_dirs must not be empty")


class FuzzerState(enum.Enum):
    STOPPED = "stopped"
    RUNNING = "running"
    PAUSED = "paused"


def render_argv(template: list[str], values: dict[str, str]) -> list[str]:
    """Substitute ``{name}`` placeholders; unknown names are a config error."""
    out = []
    for arg in template:
        def sub(m):
            key = m.group(1)
            if key not in values:
                raise ConfigError(f"command template uses unknown placeholder {{{key}}} in {arg!r}")
            return str(values[key])

        out.append(_PLACEHOLDER.sub(sub, arg))
    return out


def instances_for(cores: int, fraction: float) -> int:
    """Process count for a fuzzer holding ``fraction`` of ``cores``: ceil(cores * fraction)."""
    if fraction <= 0:
        return 0
    # absorb float noise such as 5 * 0.6 == 3.0000000000000004
    return max(1, math.ceil(cores * fraction - _EPS))


class FuzzerHandle:
    """State and bookkeeping common to all adapters.

    ``cpu_time_consumed`` is clock time spent Running multiplied by the core
    share the fuzzer held at the time; it does not advance while paused.
    """

    def __init__(self, spec: FuzzerSpec, workdir: Path, *, clock=None,
                 cache: ExecutionCache | None = None, map_size: int = DEFAULT_MAP_SIZE,
                 limiter: ResourceLimiter | None = None):
        self.spec = spec
        self.workdir = Path(workdir)
        self.clock = clock or WallClock()
        self.limiter = limiter or TimeSliceLimiter()
        self.accumulator = BitmapAccumulator(map_size)
        self.state = FuzzerState.STOPPED
        self.failed = False
        self.instances: list = []
        self._cpu = 0.0
        self._cores = 1.0
        self._running_since: float | None = None
        self.monitor = None
        if cache is not None:
            self.attach_monitor(cache)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def out_dir(self) -> Path:
        return self.workdir / self.spec.name

    @property
    def interesting_paths(self) -> list[Path]:
        return [self.out_dir / d for d in self.spec.interesting_dirs]

    @property
    def sync_path(self) -> Path:
        return self.out_dir / self.spec.sync_dir

    @property
    def corpus_paths(self) -> list[Path]:
        """Everything this fuzzer can see: its own finds plus imported seeds."""
        return self.interesting_paths + [self.sync_path]

    def attach_monitor(self, cache: ExecutionCache, log_path: Path | None = None) -> CorpusMonitor:
        self.monitor = CorpusMonitor(self.name, self.corpus_paths, cache, self.accumulator, log_path)
        return self.monitor

    def make_dirs(self) -> None:
        for p in self.corpus_paths:
            p.mkdir(parents=True, exist_ok=True)

    @property
    def bitmap(self) -> CoverageBitmap:
        return self.accumulator.snapshot()

    def restore_bitmap(self, bitmap: CoverageBitmap) -> None:
        self.accumulator.add(bitmap)

    @property
    def cpu_time_consumed(self) -> float:
        live = 0.0
        if self.state is FuzzerState.RUNNING and self._running_since is not None:
            live = (self.clock.now() - self._running_since) * self._cores
        return self._cpu + live

    def _close_interval(self) -> float:
        if self._running_since is None:
            return 0.0
        spent = (self.clock.now() - self._running_since) * self._cores
        self._cpu += spent
        self._running_since = None
        return spent

    def _open_interval(self) -> None:
        self._running_since = self.clock.now()

    def harvest(self):
        """Process new corpus files; returns the list of bitmap updates."""
        return self.monitor.poll() if self.monitor is not None else []

    # lifecycle

    def start(self, target: str = "", seeds_dir: str | os.PathLike = "") -> None:
        if self.state is not FuzzerState.STOPPED:
            raise PreconditionError(f"{self.name}: start on a {self.state.value} fuzzer")
        self.make_dirs()
        self._target, self._seeds = str(target), str(seeds_dir)
        try:
            self.instances = [self._spawn(0)]
        except AdapterError:
            self.failed = True
            raise
        self.state = FuzzerState.RUNNING
        self._cores = 1.0
        self._open_interval()

    def stop(self) -> None:
        if self.state is FuzzerState.STOPPED:
            return
        self._close_interval()
        for inst in reversed(self.instances):
            self._terminate(inst)
        self.instances = []
        self.limiter.release(self.name)
        self.state = FuzzerState.STOPPED

    def pause(self) -> None:
        if self.state is not FuzzerState.RUNNING:
            return
        for inst in self.instances:
            self._suspend(inst)
        self._close_interval()
        self.state = FuzzerState.PAUSED

    def resume(self, cores: float = 1.0) -> None:
        if self.state is FuzzerState.STOPPED:
            raise PreconditionError(f"{self.name}: resume on a stopped fuzzer")
        if self.state is FuzzerState.RUNNING:
            self._close_interval()
        self._cores = cores
        self.limiter.apply(self.name, cores, self.pids())
        for inst in self.instances:
            self._continue(inst)
        self.state = FuzzerState.RUNNING
        self._open_interval()

    def scale_to(self, n_instances: int) -> None:
        if n_instances == 0:
            self.stop()
            return
        if self.state is FuzzerState.STOPPED:
            raise PreconditionError(f"{self.name}: scale_to on a stopped fuzzer")
        capped = False
        if n_instances > 1 and not self.supports_scaling():
            log.warning("%s has no scale command; capped at 1 instance", self.name)
            n_instances, capped = 1, True
        while len(self.instances) < n_instances:
            inst = self._spawn(len(self.instances))
            if self.state is FuzzerState.PAUSED:
                self._suspend(inst)
            self.instances.append(inst)
        while len(self.instances) > n_instances:
            self._terminate(self.instances.pop())
        if capped:
            raise UnsupportedScalingError(f"{self.name} cannot scale beyond 1 instance")

    def supports_scaling(self) -> bool:
        return bool(self.spec.scale_command)

    def alive(self) -> bool:
        return self.state is not FuzzerState.STOPPED

    def pids(self) -> list[int]:
        return []

    # subclass hooks

    def _spawn(self, instance_id: int):
        raise NotImplementedError

    def _suspend(self, inst) -> None:
        pass

    def _continue(self, inst) -> None:
        pass

    def _terminate(self, inst) -> None:
        pass


class ProcessFuzzer(FuzzerHandle):
    """Adapter for an external fuzzer binary.

    Placeholders available in command templates: ``{target}``, ``{in}``
    (initial seeds), ``{out}`` (this fuzzer's output directory),
    ``{instance}`` and ``{sync}``. Each instance runs in its own session so
    pause/stop reach the whole process group.
    """

    def __init__(self, spec, workdir, *, grace_period: float = 5.0, startup_check: float = 0.2, **kw):
        super().__init__(spec, workdir, **kw)
        self.grace_period = grace_period
        self.startup_check = startup_check

    def _argv(self, instance_id: int) -> list[str]:
        template = self.spec.start_command if instance_id == 0 else self.spec.scale_command
        if not template:
            raise ConfigError(f"{self.name}: no command for instance {instance_id}")
        return render_argv(template, {
            "target": self._target,
            "in": self._seeds,
            "out": str(self.out_dir),
            "instance": str(instance_id),
            "sync": str(self.sync_path),
        })

    def _spawn(self, instance_id: int) -> subprocess.Popen:
        argv = self._argv(instance_id)
        errlog = self.out_dir / f".instance-{instance_id}.stderr"
        with open(errlog, "wb") as err:
            try:
                proc = subprocess.Popen(argv, stdin=subprocess.DEVNULL, stdout=subprocess.DEVNULL,
                                        stderr=err, cwd=self.out_dir, start_new_session=True)
            except OSError as exc:
                raise AdapterError(f"{self.name}: cannot spawn {argv[0]!r}: {exc}") from exc
        if self.startup_check > 0:
            time.sleep(self.startup_check)
            if proc.poll() is not None and proc.returncode != 0:
                raise AdapterError(f"{self.name}: instance {instance_id} exited with {proc.returncode}",
                                   stderr=errlog.read_text(errors="replace"))
        log.info("%s: started instance %d: %s", self.name, instance_id, argv)
        return proc

    def _signal(self, proc: subprocess.Popen, sig: int) -> None:
        try:
            os.killpg(proc.pid, sig)
        except (ProcessLookupError, PermissionError):
            pass

    def _suspend(self, proc):
        self._signal(proc, signal.SIGSTOP)

    def _continue(self, proc):
        self._signal(proc, signal.SIGCONT)

    def _terminate(self, proc):
        if proc.poll() is not None:
            return
        self._signal(proc, signal.SIGCONT)
        self._signal(proc, signal.SIGTERM)
        try:
            proc.wait(timeout=self.grace_period)
        except subprocess.TimeoutExpired:
            self._signal(proc, signal.SIGKILL)
            proc.wait()
        # reap stragglers left in the group
        self._signal(proc, signal.SIGKILL)

    def pids(self) -> list[int]:
        return [p.pid for p in self.instances if p.poll() is None]

    def alive(self) -> bool:
        return super().alive() and any(p.poll() is None for p in self.instances)
