import json
import os
import threading

import numpy as np
import pytest

from brokerbench import runner, stub
from brokerbench.backend import Transport, adapter, register
from brokerbench.errors import AllRunsFailed, ConfigError, UnsupportedTransport
from brokerbench.runner import ExperimentConfig, execute


def stub_config(**kw):
    base = dict(subscribers=2, count=50, interval_us=1000, size=64, delay_ms=5, repetitions=2,
                receive_timeout_ms=2000)
    base.update(kw)
    return ExperimentConfig(kw.pop("backend", "stub"), "inproc", **{k: v for k, v in base.items()
                                                                   if k != "backend"})


def test_config_invariants():
    for bad in (dict(subscribers=0), dict(count=0), dict(size=20), dict(interval_us=-1),
                dict(delay_ms=-1), dict(repetitions=0), dict(pinning=(0,))):
        with pytest.raises(ConfigError):
            ExperimentConfig("refbus", "inproc", **bad)
    with pytest.raises(UnsupportedTransport):
        ExperimentConfig("stub", "tcp")
    with pytest.raises(ConfigError):
        ExperimentConfig("refbus", "tcp", endpoint="ipc:///tmp/x")


def test_config_defaults_are_latency_baseline():
    c = ExperimentConfig("refbus", "inproc")
    assert (c.interval_us, c.size, c.subscribers, c.count, c.delay_ms, c.repetitions) == (
        1000, 32768, 1, 5000, 1000, 4)


def test_stub_fixed_latency_pipeline():
    res = execute(stub_config())
    m = res.metrics
    assert m.latency.avg == 10.0 and m.latency.max == 10.0
    assert m.jitter == 0.0
    assert m.received == 50 and m.sent == 50
    # span = 49 intervals of 1000 us plus the 10 us delivery of the last message
    assert m.throughput == pytest.approx(50 * 64 / (49 * 1000e-6 + 10e-6) / 1e6, rel=1e-12)
    assert m.cpu_median is None
    assert len(res.records) == 2 and all(len(r.per_subscriber) == 2 for r in res.records)


def test_single_message_has_no_jitter():
    m = execute(stub_config(subscribers=1, count=1, repetitions=1)).metrics
    assert m.received == 1
    assert m.jitter is None


def hierarchical_latency(run, sub, seq):
    return 10.0 * (run + 1) + 5.0 * sub + (seq % 3)


def test_hierarchical_mean_from_stub():
    desc = register(stub.descriptor(hierarchical_latency, name="stub-hier"), replace=True)
    cfg = ExperimentConfig(desc, "inproc", subscribers=3, count=30, interval_us=100, size=48,
                           delay_ms=0, repetitions=2)
    res = execute(cfg)
    # per subscriber: mean over seq of (seq % 3) is 1 for 30 messages
    per_run = [np.mean([10 * (r + 1) + 5 * s + 1 for s in range(3)]) for r in range(2)]
    assert res.metrics.latency.avg == pytest.approx(np.mean(per_run), rel=1e-12)
    # consecutive diffs of seq % 3 cycle 1, 1, 2 over 29 gaps
    expected_jitter = (9 * 4 + 1 + 1) / 29
    assert res.metrics.jitter == pytest.approx(expected_jitter, rel=1e-12)


def test_stub_pipeline_bit_reproducible():
    a = execute(stub_config(count=100, interval_us=0)).metrics
    b = execute(stub_config(count=100, interval_us=0)).metrics
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_pacing_schedule_on_virtual_clock():
    rec = execute(stub_config(count=40, interval_us=250, repetitions=1)).records[0]
    assert rec.publisher_report["publish_duration_ns"] == 40 * 250_000


def test_archive_layout(tmp_path):
    res = execute(stub_config(repetitions=2), archive_dir=tmp_path)
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["backend"] == "stub" and cfg["subscribers"] == 2
    for r in range(2):
        d = tmp_path / f"run-{r}"
        pub = json.loads((d / "publisher.json").read_text())
        assert pub["sent"] == 50 and pub["schema"] == "1"
        lat = np.loadtxt(d / "sub-0.csv", skiprows=1)
        assert lat.shape == (50,) and np.all(lat == 10.0)
    assert res.metadata["partial_runs"] is False


class _Flaky(stub.StubBackend):
    """Every subscriber of the first ``fail_binds`` runs receives nothing."""

    fail_binds = 1

    def bind(self, endpoint):
        pub = super().bind(endpoint)
        if self.binds <= self.fail_binds:
            pub.send = lambda payload: None
        return pub


def test_failed_run_is_retried_once():
    desc = register(stub.BackendDescriptor("flaky", stub.BackendKind.IN_TREE,
                                           frozenset({Transport.INPROC}), factory=_Flaky),
                    replace=True)
    res = execute(ExperimentConfig(desc, "inproc", count=5, size=32, delay_ms=0, repetitions=1,
                                   receive_timeout_ms=100))
    assert res.records[0].attempts == 2 and not res.partial


class _AlwaysFail(_Flaky):
    fail_binds = 10**9


def test_all_runs_failed():
    desc = register(stub.BackendDescriptor("dead", stub.BackendKind.IN_TREE,
                                           frozenset({Transport.INPROC}), factory=_AlwaysFail),
                    replace=True)
    with pytest.raises(AllRunsFailed):
        execute(ExperimentConfig(desc, "inproc", count=5, size=32, delay_ms=0, repetitions=2,
                                 receive_timeout_ms=50))


class _FailSecond(_Flaky):
    def bind(self, endpoint):
        pub = stub.StubBackend.bind(self, endpoint)
        if self.binds in (2, 3):  # run 1 and its retry
            pub.send = lambda payload: None
        return pub


def test_partial_runs_flagged():
    desc = register(stub.BackendDescriptor("half", stub.BackendKind.IN_TREE,
                                           frozenset({Transport.INPROC}), factory=_FailSecond),
                    replace=True)
    res = execute(ExperimentConfig(desc, "inproc", count=5, size=32, delay_ms=0, repetitions=3,
                                   receive_timeout_ms=50))
    assert res.partial and res.failed_runs == [1]
    assert res.metrics.latency.avg == 10.0


@pytest.mark.parametrize("transport", ["inproc", "ipc", "tcp"])
def test_refbus_short_run(transport):
    cfg = ExperimentConfig("refbus", transport, subscribers=2, count=100, interval_us=1000,
                           size=1024, delay_ms=100, repetitions=1, sample_interval_ms=20)
    res = execute(cfg)
    m = res.metrics
    assert m.received == 100 and m.sent == 100
    assert 0 <= m.latency.min <= m.latency.avg <= m.latency.max
    assert m.cpu_median is not None and m.mem_median > 0
    duration = res.records[0].publisher_report["publish_duration_ns"]
    assert duration >= 100 * 1000 * 1000


def test_pinning_applies(tmp_path):
    core = sorted(os.sched_getaffinity(0))[0]
    seen = {}
    real = runner.run_subscriber

    def spy(config, handle, clock):
        seen["affinity"] = os.sched_getaffinity(threading.get_native_id())
        return real(config, handle, clock)

    runner.run_subscriber = spy
    try:
        execute(ExperimentConfig("refbus", "inproc", count=5, size=32, delay_ms=10,
                                 repetitions=1, pinning=(core, core)))
    finally:
        runner.run_subscriber = real
    assert seen["affinity"] == {core}


def test_adapter_runs_through_protocol(echo_shim_command):
    desc = adapter("echo", echo_shim_command)
    for transport in ("tcp", "ipc"):
        res = execute(ExperimentConfig(desc, transport, subscribers=2, count=50, interval_us=1000,
                                       size=256, delay_ms=500, repetitions=1))
        assert res.metrics.received == 50


def test_adapter_failure_becomes_all_runs_failed():
    desc = adapter("broken", "false")
    with pytest.raises(AllRunsFailed):
        execute(ExperimentConfig(desc, "tcp", count=5, size=32, delay_ms=0, repetitions=1,
                                 sample_interval_ms=None), retries=0)


def test_shim_module_speaks_protocol():
    import subprocess
    import sys
    from brokerbench.backend import parse_adapter_report

    cfg = ExperimentConfig("refbus", "tcp", count=20, interval_us=500, size=64, delay_ms=200)
    ep = runner.resolve_endpoint(cfg)
    cmd = runner.intree_command(cfg)
    from brokerbench.backend import adapter_argv

    kw = dict(endpoint=ep, count=20, size=64, interval_us=500, delay_ms=200)
    sub = subprocess.Popen(adapter_argv(cmd, "sub", **kw), stdout=subprocess.PIPE, text=True)
    pub = subprocess.run(adapter_argv(cmd, "pub", **kw), capture_output=True, text=True, check=True)
    out, _ = sub.communicate(timeout=30)
    assert parse_adapter_report("pub", pub.stdout)["sent"] == 20
    assert parse_adapter_report("sub", out)["received"] == 20
    assert sys.executable in cmd
