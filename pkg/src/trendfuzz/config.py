"""Campaign configuration (TOML).

Minimal simulated campaign::

    mode = "sim"
    scenario = "dominant"

Minimal real campaign::

    mode = "exec"

    [target]
    argv = ["./target_afl", "@@"]

    [[fuzzers]]
    name = "afl"
    start_command = ["afl-fuzz", "-i", "{in}", "-o", "{out}", "-M", "main", "--", "{target}", "@@"]

Scheduling keys (``t_prep``, ``t_focus``, ``theta_init``, ``cores``,
``slice``, ``total_budget``, ``policy``, ...) live at the top level.
Every scalar key can be overridden from the environment:
``TRENDFUZZ_T_PREP=120`` or, for table keys, ``TRENDFUZZ_TARGET__TIMEOUT=2``.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from trendfuzz.adapter import FuzzerSpec
from trendfuzz.bitmap import DEFAULT_MAP_SIZE, check_map_size
from trendfuzz.errors import ConfigError
from trendfuzz.oracle import BITMAP_ENV
from trendfuzz.scheduler import ScheduleConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "TRENDFUZZ_"
SCHEDULE_KEYS = [f.name for f in dataclasses.fields(ScheduleConfig)]
TOP_KEYS = {"mode", "scenario", "output_dir", "rng_seed", "map_size", "target", "fuzzers", "limiter",
            "grace_period", "poll_interval", *SCHEDULE_KEYS}
TARGET_KEYS = {"path", "argv", "timeout", "stdin", "seeds", "env"}
LIMITER_KEYS = {"kind", "cgroup_root", "period_us"}
FUZZER_KEYS = {"name", "start_command", "scale_command", "interesting_dirs", "sync_dir"}
RESERVED_NAMES = {"bitmaps", "monitor", "_union", "report"}


@dataclass
class TargetSpec:
    path: str = ""
    argv: list[str] = field(default_factory=list)
    timeout: float = 1.0
    stdin: bool = False
    seeds: str = ""
    env: dict[str, str] = field(default_factory=dict)


@dataclass
class LimiterSpec:
    kind: str = "timeslice"
    cgroup_root: str = ""
    period_us: int = 100_000


@dataclass
class CampaignConfig:
    schedule: ScheduleConfig
    mode: str = "sim"
    scenario: str = ""
    output_dir: str = "campaign-out"
    rng_seed: int = 0
    map_size: int = DEFAULT_MAP_SIZE
    target: TargetSpec = field(default_factory=TargetSpec)
    fuzzers: list[FuzzerSpec] = field(default_factory=list)
    limiter: LimiterSpec = field(default_factory=LimiterSpec)
    grace_period: float = 5.0
    poll_interval: float = 1.0
    source: str = ""


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^[ \t]*\"?{re.escape(key)}\"?[ \t]*=", re.M)
    m = pat.search(text)
    if m is None:
        pat = re.compile(rf"^[ \t]*\[+[ \t]*{re.escape(key)}[ \t]*\]+", re.M)
        m = pat.search(text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _coerce(value: str, like: Any) -> Any:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value, 0)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        return value.split()
    return value


def _defaults() -> dict[str, Any]:
    d = {f.name: f.default for f in dataclasses.fields(ScheduleConfig)}
    d.update({"mode": "sim", "scenario": "", "output_dir": "campaign-out", "rng_seed": 0,
              "map_size": DEFAULT_MAP_SIZE, "grace_period": 5.0, "poll_interval": 1.0})
    return d


def apply_env(data: dict[str, Any], environ: Mapping[str, str]) -> dict[str, Any]:
    """Overlay ``TRENDFUZZ_*`` variables onto a parsed config mapping."""
    data = dict(data)
    defaults = _defaults()
    nested = {"target": (TargetSpec(), TARGET_KEYS), "limiter": (LimiterSpec(), LIMITER_KEYS)}
    for var, value in environ.items():
        if not var.startswith(ENV_PREFIX) or var == BITMAP_ENV:
            continue
        key = var[len(ENV_PREFIX):].lower()
        try:
            if "__" in key:
                table, sub = key.split("__", 1)
                if table not in nested or sub not in nested[table][1]:
                    raise ConfigError(f"environment variable {var} names no config key")
                like = getattr(nested[table][0], sub)
                data.setdefault(table, {})
                data[table] = {**data[table], sub: _coerce(value, like)}
            elif key in defaults:
                data[key] = _coerce(value, data.get(key, defaults[key]))
            else:
                raise ConfigError(f"environment variable {var} names no config key")
        except ValueError as exc:
            raise ConfigError(f"environment variable {var}: {exc}") from exc
    return data


def parse_config(text: str, source: str = "<config>", environ: Mapping[str, str] | None = None,
                 overrides: Mapping[str, Any] | None = None) -> CampaignConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"{source}: {exc}", line=int(m.group(1)) if m else None) from exc

    def fail(msg, key):
        raise ConfigError(f"{source}: {msg}", line=_line_of(text, key))

    for key in data:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", key)
    data = apply_env(data, os.environ if environ is None else environ)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    sched_kwargs = {k: data[k] for k in SCHEDULE_KEYS if k in data}
    try:
        schedule = ScheduleConfig(**sched_kwargs)
    except (ConfigError, TypeError) as exc:
        bad = next((k for k in sched_kwargs if k in str(exc)), "")
        fail(str(exc), bad)

    mode = data.get("mode", "sim")
    if mode not in ("sim", "exec"):
        fail(f"mode must be 'sim' or 'exec', got {mode!r}", "mode")

    try:
        map_size = check_map_size(int(data.get("map_size", DEFAULT_MAP_SIZE)))
    except (ConfigError, ValueError) as exc:
        fail(str(exc), "map_size")

    rng_seed = data.get("rng_seed", 0)
    if isinstance(rng_seed, bool) or not isinstance(rng_seed, int) or not 0 <= rng_seed < 2**64:
        fail(f"rng_seed must be an unsigned 64-bit integer, got {rng_seed!r}", "rng_seed")

    target_raw = data.get("target", {})
    if not isinstance(target_raw, dict):
        fail("[target] must be a table", "target")
    for k in target_raw:
        if k not in TARGET_KEYS:
            fail(f"unknown [target] key {k!r}", k)
    target = TargetSpec(**target_raw)
    if isinstance(target.argv, str):
        target.argv = target.argv.split()

    limiter_raw = data.get("limiter", {})
    for k in limiter_raw:
        if k not in LIMITER_KEYS:
            fail(f"unknown [limiter] key {k!r}", k)
    limiter = LimiterSpec(**limiter_raw)
    if limiter.kind not in ("timeslice", "cgroup"):
        fail(f"limiter kind must be 'timeslice' or 'cgroup', got {limiter.kind!r}", "kind")
    if limiter.kind == "cgroup" and not limiter.cgroup_root:
        fail("cgroup limiter needs cgroup_root", "kind")

    fuzzers = []
    for i, raw in enumerate(data.get("fuzzers", [])):
        for k in raw:
            if k not in FUZZER_KEYS:
                fail(f"fuzzers[{i}]: unknown key {k!r}", k)
        try:
            fuzzers.append(FuzzerSpec(**raw))
        except (ConfigError, TypeError) as exc:
            fail(f"fuzzers[{i}]: {exc}", "fuzzers")
    names = [f.name for f in fuzzers]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        fail(f"duplicate fuzzer names: {sorted(dup)}", "fuzzers")
    if set(names) & RESERVED_NAMES:
        fail(f"reserved fuzzer names: {sorted(set(names) & RESERVED_NAMES)}", "fuzzers")

    if mode == "sim":
        if not data.get("scenario"):
            fail("sim mode needs a scenario (built-in name or file path)", "scenario")
    else:
        if not target.argv and not target.path:
            fail("exec mode needs [target] argv or path", "target")
        if not target.argv:
            target.argv = [target.path, "@@"]
        if not fuzzers:
            fail("exec mode needs at least one [[fuzzers]] entry", "fuzzers")
        for f in fuzzers:
            if not f.start_command:
                fail(f"fuzzer {f.name} has no start_command", "start_command")

    scenario = str(data.get("scenario", ""))
    if scenario and mode == "sim" and source not in ("<config>",):
        # scenario paths are relative to the config file
        candidate = Path(source).parent / scenario
        if candidate.exists():
            scenario = str(candidate)

    return CampaignConfig(
        schedule=schedule,
        mode=mode,
        scenario=scenario,
        output_dir=str(data.get("output_dir", "campaign-out")),
        rng_seed=rng_seed,
        map_size=map_size,
        target=target,
        fuzzers=fuzzers,
        limiter=limiter,
        grace_period=float(data.get("grace_period", 5.0)),
        poll_interval=float(data.get("poll_interval", 1.0)),
        source=source,
    )


def load_config(path: str | os.PathLike, environ: Mapping[str, str] | None = None,
                overrides: Mapping[str, Any] | None = None) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path), environ, overrides)
