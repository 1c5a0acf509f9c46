import csv
import hashlib
import json
import subprocess
import sys

import pytest

from trendfuzz.cli import main
from trendfuzz.report import build_report, compare
from tests.stubs import sim_config_text


def write_config(tmp_path, scenario="dominant", name="c.toml", **keys):
    p = tmp_path / name
    p.write_text(sim_config_text(scenario, tmp_path / "out", **keys))
    return p


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and "report" not in p.relative_to(root).parts:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--cpu-budget", "3600"]) == 0
    out = tmp_path / "out"
    rounds = (out / "rounds.jsonl").read_text().splitlines()
    assert len(rounds) >= 1
    for name in ("coverage.csv", "state.json", "summary.json", "seed_index.jsonl", "bitmaps/_union.bitmap",
                 "bitmaps/alpha.bitmap"):
        assert (out / name).exists(), name
    assert "final density" in capsys.readouterr().out


def test_missing_config_flag_is_usage_error():
    proc = subprocess.run([sys.executable, "-m", "trendfuzz.cli", "run"], capture_output=True, text=True)
    assert proc.returncode == 2 and "--config" in proc.stderr


def test_invalid_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('mode = "sim"\nscenario = "dominant"\nt_focus = 0\n')
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2


def test_flags_override_config(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "elsewhere"
    assert main(["run", "--config", str(cfg), "--cpu-budget", "1800", "--policy", "roundrobin",
                 "--seed", "18446744073709551615", "--output", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["policy"] == "roundrobin" and summary["rng_seed"] == 2**64 - 1
    assert summary["elapsed_cpu"] == 1800


def test_same_seed_gives_identical_rounds(tmp_path):
    cfg = write_config(tmp_path, scenario="inversion")
    main(["run", "--config", str(cfg), "--cpu-budget", "5400", "--output", str(tmp_path / "a")])
    main(["run", "--config", str(cfg), "--cpu-budget", "5400", "--output", str(tmp_path / "b")])
    assert (tmp_path / "a" / "rounds.jsonl").read_bytes() == (tmp_path / "b" / "rounds.jsonl").read_bytes()
    main(["run", "--config", str(cfg), "--cpu-budget", "5400", "--output", str(tmp_path / "c"), "--seed", "9"])
    assert (tmp_path / "a" / "rounds.jsonl").read_bytes() != (tmp_path / "c" / "rounds.jsonl").read_bytes()


def test_resume_continues_the_same_campaign(tmp_path):
    cfg = write_config(tmp_path, scenario="complementary")
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["run", "--config", str(cfg), "--cpu-budget", "14400", "--output", str(full)]) == 0
    assert main(["run", "--config", str(cfg), "--cpu-budget", "7200", "--output", str(part)]) == 0
    assert main(["run", "--config", str(cfg), "--cpu-budget", "14400", "--output", str(part), "--resume"]) == 0
    assert (full / "rounds.jsonl").read_bytes() == (part / "rounds.jsonl").read_bytes()
    assert (full / "bitmaps" / "_union.bitmap").read_bytes() == (part / "bitmaps" / "_union.bitmap").read_bytes()


def test_all_fuzzers_failing_aborts_with_exit_1(tmp_path):
    cfg = tmp_path / "exec.toml"
    cfg.write_text(f'mode = "exec"\noutput_dir = "{tmp_path / "out"}"\ntotal_budget = 60\n'
                   '[target]\nargv = ["/bin/true", "@@"]\n'
                   '[[fuzzers]]\nname = "ghost"\nstart_command = ["/nonexistent/fuzzer"]\n')
    assert main(["run", "--config", str(cfg)]) == 1
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["aborted"] and summary["failed"] == ["ghost"]


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "no rounds.jsonl" in capsys.readouterr().err


def test_report_single_round(tmp_path):
    cfg = write_config(tmp_path)
    main(["run", "--config", str(cfg), "--cpu-budget", "1800"])
    out = tmp_path / "out"
    before = tree_digest(out)
    report = build_report(out)
    assert tree_digest(out) == before
    build_report(out)
    assert tree_digest(out) == before
    table = (out / "report" / "rounds.txt").read_text().splitlines()
    assert len(table) == 3 and table[2].startswith("1*")
    rows = list(csv.reader(open(report.files["heatmap_csv"])))
    assert len(rows) == 2 and sum(float(x) for x in rows[1][1:]) == pytest.approx(1, abs=1e-6)
    assert len(list(csv.reader(open(report.files["table_csv"])))) == 2


def test_report_dominant_heatmap(run_sim):
    campaign, _ = run_sim("dominant", seed=0)
    report = build_report(campaign.output_dir, campaign.output_dir.parent / "rep")
    rows = list(csv.reader(open(report.files["heatmap_csv"])))
    header, body = rows[0], rows[1:]
    sums = {name: sum(float(r[i]) for r in body) for i, name in enumerate(header) if i}
    assert max(sums, key=sums.get) == "alpha"
    for r in body:
        assert abs(sum(float(x) for x in r[1:]) - 1) <= 1e-6
    series = list(csv.reader(open(report.files["coverage_csv"])))
    assert series[0] == ["cpu_seconds", "alpha", "beta", "gamma", "_union"]
    times = [float(r[0]) for r in series[1:]]
    assert times == sorted(times) and times[-1] == 14400


def test_report_survives_corrupt_telemetry(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["run", "--config", str(cfg), "--cpu-budget", "3600"])
    out = tmp_path / "out"
    with open(out / "rounds.jsonl", "a") as fh:
        fh.write("{not json\n")
    (out / "coverage.csv").unlink()
    assert main(["report", str(out)]) == 0
    err = capsys.readouterr().err
    assert "corrupt" in err and "coverage.csv" in err


def test_compare(tmp_path, capsys):
    cfg = write_config(tmp_path, scenario="complementary")
    a, r = tmp_path / "auto", tmp_path / "rr"
    main(["run", "--config", str(cfg), "--output", str(a), "--cpu-budget", "14400"])
    main(["run", "--config", str(cfg), "--output", str(r), "--cpu-budget", "14400", "--policy", "roundrobin"])
    rows = compare([r, a])
    assert [x.directory for x in rows] == [str(a), str(r)] and rows[0].rank == 1 and rows[1].rank == 2
    assert len(compare([a])) == 1
    tied = compare([a, a])
    assert all(x.tie and x.rank == 1 for x in tied)
    capsys.readouterr()
    assert main(["compare", str(a), str(a)]) == 0
    assert "tie" in capsys.readouterr().out
    assert main(["compare", str(tmp_path / "missing")]) == 1


def test_compare_falls_back_to_union_bitmap(tmp_path):
    cfg = write_config(tmp_path)
    main(["run", "--config", str(cfg), "--cpu-budget", "1800"])
    dens = json.loads((tmp_path / "out" / "summary.json").read_text())["final_density"]
    (tmp_path / "out" / "summary.json").unlink()
    assert compare([tmp_path / "out"])[0].final_density == dens
