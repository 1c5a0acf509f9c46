import os
import sys
import time
from pathlib import Path

import pytest

from trendfuzz.adapter import FuzzerSpec, FuzzerState, ProcessFuzzer, instances_for, render_argv
from trendfuzz.clock import VirtualClock
from trendfuzz.errors import AdapterError, ConfigError, PreconditionError, UnsupportedScalingError
from trendfuzz.limiter import CgroupLimiter, TimeSliceLimiter
from tests.stubs import StubFuzzer

TICKER = """
import sys, time, subprocess
out = sys.argv[1]
if len(sys.argv) > 2:
    child = subprocess.Popen(["sleep", "300"])
    open(out + ".child", "w").write(str(child.pid))
while True:
    with open(out, "a") as fh:
        fh.write("x")
    time.sleep(0.02)
"""


def pid_gone(pid: int) -> bool:
    try:
        with open(f"/proc/{pid}/stat") as fh:
            return fh.read().split(")")[-1].split()[0] in ("Z", "X")
    except FileNotFoundError:
        return True


@pytest.fixture
def ticker(tmp_path):
    script = tmp_path / "ticker.py"
    script.write_text(TICKER)
    return script


def process_fuzzer(tmp_path, argv, **kw):
    spec = FuzzerSpec("tick", start_command=argv)
    return ProcessFuzzer(spec, tmp_path / "work", grace_period=2.0, startup_check=0.1, **kw)


def test_render_argv():
    argv = render_argv("fuzz -i {in} -o {out} {target}".split(), {"in": "/c/seeds", "out": "/c/o", "target": "/t"})
    assert argv == ["fuzz", "-i", "/c/seeds", "-o", "/c/o", "/t"]
    with pytest.raises(ConfigError):
        render_argv(["{nope}"], {})


@pytest.mark.parametrize("bad", ["", "a b", "../x", "a/b"])
def test_spec_rejects_bad_names(bad):
    with pytest.raises(ConfigError):
        FuzzerSpec(bad)


def test_spec_needs_interesting_dirs():
    with pytest.raises(ConfigError):
        FuzzerSpec("a", interesting_dirs=[])


def test_instances_for_examples():
    assert instances_for(4, 0.6) == 3
    assert instances_for(4, 0.0) == 0
    assert instances_for(5, 0.6) == 3  # 5 * 0.6 is 3.0000000000000004 in floating point
    assert instances_for(1, 0.01) == 1


def test_lifecycle_and_cpu_accounting_on_virtual_clock(tmp_path):
    clock = VirtualClock()
    f = StubFuzzer("a", tmp_path, clock=clock)
    assert f.state is FuzzerState.STOPPED
    f.start()
    assert f.state is FuzzerState.RUNNING
    with pytest.raises(PreconditionError):
        f.start()
    clock.sleep(10)
    f.pause()
    assert f.cpu_time_consumed == 10
    clock.sleep(50)
    assert f.cpu_time_consumed == 10  # paused time is free
    f.resume(cores=2.5)
    clock.sleep(4)
    assert f.cpu_time_consumed == 20
    f.stop()
    f.stop()
    assert f.state is FuzzerState.STOPPED and f.terminated == 1
    with pytest.raises(PreconditionError):
        f.resume()


def test_scale_to(tmp_path):
    lim = TimeSliceLimiter()
    f = StubFuzzer("s", tmp_path, scalable=True, limiter=lim)
    f.start()
    f.scale_to(1)
    assert f.spawned == 1
    f.scale_to(3)
    assert len(f.instances) == 3
    f.scale_to(1)
    assert len(f.instances) == 1 and f.terminated == 2
    f.resume(0.5)
    assert lim.quotas["s"] == 0.5
    f.scale_to(0)
    assert f.state is FuzzerState.STOPPED and "s" not in lim.quotas


def test_scale_without_command_caps_at_one(tmp_path):
    f = StubFuzzer("n", tmp_path)
    f.start()
    with pytest.raises(UnsupportedScalingError):
        f.scale_to(3)
    assert len(f.instances) == 1 and f.state is FuzzerState.RUNNING


def test_pause_resume_real_process(tmp_path, ticker):
    out = tmp_path / "ticks"
    f = process_fuzzer(tmp_path, [sys.executable, str(ticker), str(out)])
    f.start()
    try:
        time.sleep(0.3)
        f.pause()
        time.sleep(0.1)
        frozen = out.stat().st_size
        time.sleep(0.3)
        assert out.stat().st_size == frozen
        assert f.alive()
        f.resume()
        time.sleep(0.3)
        assert out.stat().st_size > frozen
    finally:
        f.stop()
    assert not f.alive()


def test_stop_kills_process_tree(tmp_path, ticker):
    out = tmp_path / "ticks"
    f = process_fuzzer(tmp_path, [sys.executable, str(ticker), str(out), "spawn"])
    f.start()
    deadline = time.time() + 5
    while not Path(str(out) + ".child").exists() and time.time() < deadline:
        time.sleep(0.05)
    child = int(Path(str(out) + ".child").read_text())
    parent = f.pids()[0]
    f.pause()  # stopping a paused fuzzer must still work
    f.stop()
    time.sleep(0.2)
    assert pid_gone(parent) and pid_gone(child)
    f.stop()


def test_nonexistent_binary_is_adapter_error(tmp_path):
    f = process_fuzzer(tmp_path, ["/nonexistent/fuzzer-binary"])
    with pytest.raises(AdapterError):
        f.start()
    assert f.failed and f.state is FuzzerState.STOPPED


def test_immediate_crash_surfaces_stderr(tmp_path):
    f = process_fuzzer(tmp_path, [sys.executable, "-c", "import sys; sys.stderr.write('bad target'); sys.exit(3)"])
    with pytest.raises(AdapterError) as info:
        f.start()
    assert "bad target" in info.value.stderr


def test_command_placeholders(tmp_path):
    script = "import sys, pathlib; pathlib.Path(sys.argv[1], 'args').write_text(' '.join(sys.argv[2:]))"
    spec = FuzzerSpec("p", start_command=[sys.executable, "-c", script, "{out}", "{target}", "{in}", "{instance}", "{sync}"])
    f = ProcessFuzzer(spec, tmp_path, startup_check=0)
    f.start("/bin/target", "/seeds")
    f.instances[0].wait(5)
    f.stop()
    assert (tmp_path / "p" / "args").read_text() == f"/bin/target /seeds 0 {tmp_path / 'p' / 'sync'}"


def test_directory_layout(tmp_path):
    f = StubFuzzer("lay", tmp_path)
    f.start()
    for d in ("queue", "crashes", "hangs", "sync"):
        assert (tmp_path / "lay" / d).is_dir()


def test_cgroup_limiter_writes_quota(tmp_path):
    lim = CgroupLimiter(tmp_path, period_us=100_000)
    lim.apply("afl", 2.4, [111, 222])
    group = tmp_path / "trendfuzz-afl"
    assert (group / "cpu.max").read_text() == "240000 100000\n"
    assert (group / "cgroup.procs").read_text().split() == ["111", "222"]
    lim.apply("afl", 0, [])
    assert (group / "cpu.max").read_text() == "1000 100000\n"
    lim.release("afl")
    assert (group / "cpu.max").read_text() == "max 100000\n"
