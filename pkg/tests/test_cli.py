import json
import subprocess
import sys

import pytest

from brokerbench import stub
from brokerbench.backend import register
from brokerbench.cli import EXIT_ALL_FAILED, EXIT_OK, EXIT_USAGE, UsageError, main, parse_and_validate

register(stub.descriptor(stub.constant_latency(10.0), name="stubA"), replace=True)
register(stub.descriptor(stub.constant_latency(7.0), name="stubB"), replace=True)


def test_latency_profile_is_baseline():
    inv = parse_and_validate(["run", "--backend", "refbus", "--transport", "tcp",
                              "--profile", "latency"])
    c = inv.config
    assert (c.interval_us, c.size, c.subscribers, c.count, c.delay_ms, c.repetitions) == (
        1000, 32768, 1, 5000, 1000, 4)


@pytest.mark.parametrize("profile", ["throughput", "cpu"])
def test_saturation_profiles(profile):
    assert parse_and_validate(["run", "--profile", profile]).config.interval_us == 0
    with pytest.raises(UsageError):
        parse_and_validate(["run", "--profile", profile, "--interval-us", "100"])


@pytest.mark.parametrize("argv", [
    ["run", "--subscribers", "0"],
    ["run", "--size", "8"],
    ["run", "--transport", "carrier-pigeon"],
    ["run", "--backend", "nope"],
    ["run", "--adapter-command", "x", "--transport", "inproc"],
    ["sweep", "--spec", "/does/not/exist.toml"],
    ["sweep", "--set", "sizes"],
    ["analyze", "--results", "/does/not/exist"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err


def test_cores_from_environment(monkeypatch):
    monkeypatch.setenv("BROKERBENCH_CORES", "0,0")
    assert parse_and_validate(["run"]).config.pinning == (0, 0)


def test_list_backends(capsys):
    assert main(["list-backends", "--json"]) == EXIT_OK
    docs = json.loads(capsys.readouterr().out)
    names = {d["name"] for d in docs}
    assert {"refbus", "stub"} <= names


def test_run_json(capsys):
    rc = main(["run", "--backend", "stubA", "--count", "20", "--delay-ms", "0",
               "--repetitions", "2", "--subscribers", "2", "--json"])
    assert rc == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["metrics"]["latency"]["avg"] == 10.0 and doc["metrics"]["jitter"] == 0.0


def test_run_all_failed_exit_2(capsys):
    rc = main(["run", "--backend", "dead", "--adapter-command", "false", "--transport", "tcp",
               "--count", "5", "--delay-ms", "0", "--repetitions", "1", "--no-sampling"])
    assert rc == EXIT_ALL_FAILED


def test_sweep_analyze_report(tmp_path, capsys):
    argv = ["sweep", "--out", str(tmp_path), "--id", "t",
            "--set", "backends=stubA,stubB", "--set", "transports=inproc",
            "--set", "sizes=64,1KB", "--set", "subscribers=1,2",
            "--set", "count=10", "--set", "delay_ms=0", "--set", "repetitions=1"]
    assert main(argv + ["--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"] == doc["configurations"] == 8
    res = tmp_path / "t"
    assert main(["analyze", "--results", str(res), "--metric", "latency.avg", "--json"]) == EXIT_OK
    maps = json.loads(capsys.readouterr().out)["maps"]
    assert {row["winner"] for row in maps[0]} == {"stubB"}
    assert main(["report", "--results", str(res)]) == EXIT_OK
    assert list((res / "figs").glob("*.svg"))
    assert (res / "rows.csv").read_text().startswith("backend,transport")


def test_sweep_spec_file(tmp_path, capsys):
    spec = tmp_path / "mini.toml"
    spec.write_text('backends = ["stubA"]\ntransports = ["inproc"]\nsizes = [64]\n'
                    'count = 5\ndelay_ms = 0\nrepetitions = 1\n')
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "mini" / "rows.jsonl").is_file()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "brokerbench", "list-backends"],
                         capture_output=True, text=True, check=True).stdout
    assert "refbus" in out
