"""Execute one experiment configuration R times and average the results.

Process topology follows the transport: ``inproc`` runs the publisher and
subscribers as threads of the calling process; ``ipc`` and ``tcp`` run one
process per role, launched through the adapter command line (in-tree
backends use :mod:`brokerbench.shim` as their adapter).

Averaging is hierarchical: subscribers within a run first, then runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shlex
import socket
import subprocess
import sys
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .backend import (
    RECEIVE_TIMEOUT_MS,
    BackendDescriptor,
    BackendKind,
    Endpoint,
    Transport,
    adapter_argv,
    connect_with_retry,
    get_backend,
    parse_adapter_report,
    publisher_report,
    subscriber_report,
)
from .clock import SYSTEM_CLOCK
from .codec import MIN_PAYLOAD_SIZE, decode, encode
from .errors import (
    AdapterError,
    AllRunsFailed,
    BenchError,
    ClockError,
    ConfigError,
    EmptySeries,
    SendFailed,
    RunFailed,
)
from .metrics import RunMetrics, ThroughputInput
from .sampler import DEFAULT_INTERVAL_MS, ResourceTimeline, Sampler, aggregate

log = logging.getLogger(__name__)

JOIN_TIMEOUT_S = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    backend: BackendDescriptor
    transport: Transport
    subscribers: int = 1
    count: int = 5000
    interval_us: int = 1000
    size: int = 32 * 1024
    delay_ms: int = 1000
    repetitions: int = 4
    endpoint: str | None = None
    pinning: tuple[int, ...] = ()
    receive_timeout_ms: int = RECEIVE_TIMEOUT_MS
    sample_interval_ms: float | None = DEFAULT_INTERVAL_MS

    def __post_init__(self):
        if isinstance(self.backend, str):
            object.__setattr__(self, "backend", get_backend(self.backend))
        object.__setattr__(self, "transport", self.backend.check(self.transport))
        object.__setattr__(self, "pinning", tuple(int(c) for c in self.pinning))
        checks = [
            (self.subscribers >= 1, "subscribers must be >= 1"),
            (self.count >= 1, "count must be >= 1"),
            (self.size >= MIN_PAYLOAD_SIZE, f"size must be >= {MIN_PAYLOAD_SIZE} bytes"),
            (self.interval_us >= 0, "interval must be >= 0"),
            (self.delay_ms >= 0, "delay must be >= 0"),
            (self.repetitions >= 1, "repetitions must be >= 1"),
            (self.receive_timeout_ms > 0, "receive timeout must be > 0"),
            (not self.pinning or len(self.pinning) >= self.subscribers + 1,
             f"pinning needs >= {self.subscribers + 1} cores (publisher + subscribers)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.endpoint is not None:
            ep = Endpoint.parse(self.endpoint)
            if ep.transport is not self.transport:
                raise ConfigError(f"endpoint {self.endpoint} does not match {self.transport.value}")

    @property
    def key(self) -> dict:
        """Fields that identify the measurement (what a sweep row is keyed by)."""
        return {
            "backend": self.backend.name,
            "transport": self.transport.value,
            "interval_us": self.interval_us,
            "size": self.size,
            "subscribers": self.subscribers,
            "count": self.count,
            "delay_ms": self.delay_ms,
            "repetitions": self.repetitions,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.key, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = dict(self.key)
        d.update(
            backend_descriptor=self.backend.to_dict(),
            backend_options={k: v for k, v in self.backend.options if _jsonable(v)},
            endpoint=self.endpoint,
            pinning=list(self.pinning),
            receive_timeout_ms=self.receive_timeout_ms,
            sample_interval_ms=self.sample_interval_ms,
        )
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _jsonable(v) -> bool:
    return isinstance(v, (int, float, str, bool, type(None)))


@dataclass
class RunRecord:
    run_index: int
    per_subscriber: list[RunMetrics]
    series: list[np.ndarray]
    publisher_report: dict
    timeline: ResourceTimeline | None
    metrics: RunMetrics | None = None
    error: str | None = None
    attempts: int = 1

    @property
    def failed(self) -> bool:
        return self.metrics is None


@dataclass
class ExecutionResult:
    config: ExperimentConfig
    metrics: RunMetrics
    records: list[RunRecord]
    failed_runs: list[int] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failed_runs)

    @property
    def metadata(self) -> dict:
        ok = [r for r in self.records if not r.failed]
        pace = [r.publisher_report.get("publish_duration_ns") for r in ok]
        return {
            "partial_runs": self.partial,
            "failed_runs": self.failed_runs,
            "publish_duration_ns": pace,
            "dropped": [r.publisher_report.get("dropped") for r in ok],
        }


# -- pinning & endpoints -----------------------------------------------------

def pin(core: int | None) -> None:
    """Pin the calling thread to ``core`` (Linux affinity is per thread)."""
    if core is not None and hasattr(os, "sched_setaffinity"):
        os.sched_setaffinity(threading.get_native_id(), {core})


def _core(config: ExperimentConfig, role_index: int) -> int | None:
    return config.pinning[role_index] if config.pinning else None


def allocate_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def resolve_endpoint(config: ExperimentConfig, run_dir: str | None = None) -> Endpoint:
    """A fresh endpoint for one run; TCP port 0 becomes a concrete free port."""
    run_id = uuid.uuid4().hex[:10]
    if config.endpoint:
        ep = Endpoint.parse(config.endpoint)
    elif config.transport is Transport.INPROC:
        ep = Endpoint(Transport.INPROC, f"refbus-{run_id}")
    elif config.transport is Transport.IPC:
        ep = Endpoint(Transport.IPC, os.path.join(run_dir or tempfile.gettempdir(),
                                                  f"refbus-{run_id}.sock"))
    else:
        ep = Endpoint(Transport.TCP, "127.0.0.1:0")
    if ep.transport is Transport.TCP and ep.host_port[1] == 0:
        host = ep.host_port[0]
        ep = Endpoint(Transport.TCP, f"{host}:{allocate_port(host)}")
    return ep


# -- the two roles -----------------------------------------------------------

def run_publisher(config: ExperimentConfig, handle, clock=SYSTEM_CLOCK) -> dict:
    """Sleep D ms, then send C stamped payloads on an absolute T-us schedule."""
    clock.sleep(config.delay_ms / 1000)
    wait = getattr(handle, "wait_for_subscribers", None)
    if wait is not None and not wait(config.subscribers, JOIN_TIMEOUT_S):
        log.warning("only some subscribers joined before publishing started")
    period = config.interval_us * 1000
    size = config.size
    first = ts = None
    start = clock.mono_ns()
    for i in range(config.count):
        if period:
            clock.sleep_until(start + i * period)
        ts = clock.wall_ns()
        try:
            handle.send(encode(ts, size))
        except Exception as exc:
            raise SendFailed(f"send {i} failed: {exc}") from exc
        if first is None:
            first = ts
    if period:
        clock.sleep_until(start + config.count * period)
    report = publisher_report(first, ts, config.count)
    report["publish_duration_ns"] = clock.mono_ns() - start
    stats = getattr(handle, "stats", None)
    if stats is not None:
        report["dropped"] = sum(s["dropped"] for s in stats())
    return report


def run_subscriber(config: ExperimentConfig, handle, clock=SYSTEM_CLOCK) -> dict:
    """Receive until C messages or a silence timeout; latencies in microseconds."""
    latencies = []
    last = None
    # the first message can only arrive after the publisher's start delay
    timeout = config.receive_timeout_ms + config.delay_ms
    size = config.size
    while len(latencies) < config.count:
        payload = handle.receive(timeout)
        if payload is None:
            break
        now = clock.wall_ns()
        sent = decode(payload, size)
        if now < sent:
            raise ClockError(f"negative latency ({now - sent} ns): clock source mismatch")
        latencies.append((now - sent) / 1000)
        last = now
        timeout = config.receive_timeout_ms
    return subscriber_report(latencies, last, len(latencies))


def subscriber_metrics(sub: dict, pub: dict, size: int) -> RunMetrics:
    series = metrics.as_series(sub["latencies_us"])
    stats = metrics.latency_stats(series)  # EmptySeries on total loss
    jit = metrics.jitter(series) if series.size >= 2 else None
    thr = metrics.throughput(ThroughputInput(sub["received"], size, pub["first_send_ns"],
                                             sub["last_recv_ns"]))
    return RunMetrics(latency=stats, throughput=thr, jitter=jit,
                      received=sub["received"], sent=pub["sent"])


# -- topologies --------------------------------------------------------------

def _run_threads(config: ExperimentConfig, backend, endpoint: Endpoint):
    clock = getattr(backend, "clock", SYSTEM_CLOCK)
    pub = backend.bind(endpoint)
    subs = []
    try:
        for _ in range(config.subscribers):
            subs.append(connect_with_retry(backend, endpoint))
        results: dict = {}
        errors: list = []

        def role(key, core, fn, handle):
            try:
                pin(core)
                results[key] = fn(config, handle, clock)
            except BaseException as exc:  # reported to the orchestrator
                errors.append(exc)

        threads = [
            threading.Thread(target=role, args=(i, _core(config, 1 + i), run_subscriber, h),
                             name=f"sub-{i}", daemon=True)
            for i, h in enumerate(subs)
        ]
        threads.append(threading.Thread(target=role,
                                        args=("pub", _core(config, 0), run_publisher, pub),
                                        name="pub", daemon=True))
        sampler = _start_sampler(config, backend, [os.getpid()])
        for t in threads:
            t.start()
        threads[-1].join()
        pub.close()
        for t in threads[:-1]:
            t.join()
        timeline = sampler.stop() if sampler else None
    finally:
        pub.close()
        for h in subs:
            h.close()
    if errors:
        raise RunFailed(str(errors[0])) from errors[0]
    return results["pub"], [results[i] for i in range(config.subscribers)], timeline


def intree_command(config: ExperimentConfig) -> str:
    """Adapter command line that runs an in-tree backend through :mod:`brokerbench.shim`."""
    desc = config.backend
    argv = [sys.executable, "-m", "brokerbench.shim", "--backend", desc.name,
            "--subscribers", str(config.subscribers),
            "--receive-timeout-ms", str(config.receive_timeout_ms)]
    from .backend import _REGISTRY

    if _REGISTRY.get(desc.name) is not desc:
        factory = desc.factory
        argv += ["--factory", f"{factory.__module__}:{factory.__qualname__}"]
    opts = {k: v for k, v in desc.options if _jsonable(v)}
    if opts:
        argv += ["--options", json.dumps(opts, sort_keys=True)]
    return shlex.join(argv)


def _run_processes(config: ExperimentConfig, endpoint: Endpoint, command: str, backend=None):
    """Subscribers first, then the publisher, each as its own process."""
    common = dict(endpoint=endpoint, count=config.count, size=config.size,
                  interval_us=config.interval_us, delay_ms=config.delay_ms)
    procs = []
    try:
        for i in range(config.subscribers):
            procs.append(_popen(adapter_argv(command, "sub", **common), _core(config, 1 + i)))
        procs.append(_popen(adapter_argv(command, "pub", **common), _core(config, 0)))
        sampler = _start_sampler(config, backend, [p.pid for p in procs])
        budget = _run_budget_s(config)
        outputs = []
        for p in procs[::-1]:  # publisher finishes first
            try:
                out, err = p.communicate(timeout=budget)
            except subprocess.TimeoutExpired:
                raise RunFailed(f"role process {p.pid} timed out") from None
            if p.returncode != 0:
                raise RunFailed(f"role process exited {p.returncode}: {err.strip()[-500:]}")
            outputs.append(out)
        timeline = sampler.stop() if sampler else None
    finally:
        for p in procs:
            if p.poll() is None:
                p.kill()
                p.wait()
    outputs = outputs[::-1]
    try:
        pub = parse_adapter_report("pub", outputs[-1])
        subs = [parse_adapter_report("sub", o) for o in outputs[:-1]]
    except AdapterError as exc:
        raise RunFailed(str(exc)) from exc
    return pub, subs, timeline


def _popen(argv, core):
    p = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    if core is not None and hasattr(os, "sched_setaffinity"):
        try:
            os.sched_setaffinity(p.pid, {core})
        except ProcessLookupError:
            pass
    return p


def _run_budget_s(config: ExperimentConfig) -> float:
    pace = config.count * config.interval_us / 1e6
    return config.delay_ms / 1000 + pace + JOIN_TIMEOUT_S + 2 * config.receive_timeout_ms / 1000 + 30


def _start_sampler(config, backend, pids):
    if config.sample_interval_ms is None or not getattr(backend, "sampling", True):
        return None
    return Sampler(pids, config.sample_interval_ms).start()


# -- orchestration -----------------------------------------------------------

def run_once(config: ExperimentConfig, run_index: int = 0, backend=None,
             run_dir: str | None = None) -> RunRecord:
    """One repetition. Raises RunFailed when any subscriber received nothing."""
    endpoint = resolve_endpoint(config, run_dir)
    if config.backend.kind is BackendKind.SUBPROCESS_ADAPTER:
        pub, subs, timeline = _run_processes(config, endpoint, config.backend.adapter_command)
    elif config.transport is Transport.INPROC:
        backend = backend or config.backend.create()
        pub, subs, timeline = _run_threads(config, backend, endpoint)
    else:
        pub, subs, timeline = _run_processes(config, endpoint, intree_command(config), backend)
    series = [metrics.as_series(s["latencies_us"]) for s in subs]
    try:
        per_sub = [subscriber_metrics(s, pub, config.size) for s in subs]
    except EmptySeries:
        raise RunFailed("a subscriber received no messages") from None
    resources = {}
    if timeline is not None and len(timeline):
        resources = aggregate(timeline)
    per_sub = [dataclasses.replace(m, **resources) for m in per_sub]
    run = metrics.average_subscribers(per_sub)
    return RunRecord(run_index, per_sub, series, pub, timeline, metrics=run)


def execute(config: ExperimentConfig, archive_dir: str | os.PathLike | None = None,
            retries: int = 1) -> ExecutionResult:
    """Run ``config.repetitions`` times; subscriber-average each run, then run-average."""
    backend = None
    if config.backend.kind is BackendKind.IN_TREE:
        backend = config.backend.create()
    run_dir = None
    if archive_dir is not None:
        Path(archive_dir).mkdir(parents=True, exist_ok=True)
        run_dir = str(archive_dir) if config.transport is Transport.IPC else None
    records = []
    for r in range(config.repetitions):
        record = None
        error = None
        for attempt in range(1 + retries):
            try:
                record = run_once(config, r, backend, run_dir=_short_dir(run_dir))
                record.attempts = attempt + 1
                break
            except (BenchError, OSError) as exc:
                error = f"{type(exc).__name__}: {exc}"
                log.warning("run %d attempt %d failed: %s", r, attempt + 1, error)
        if record is None:
            record = RunRecord(r, [], [], {}, None, error=error, attempts=1 + retries)
        records.append(record)
    ok = [rec for rec in records if not rec.failed]
    if not ok:
        raise AllRunsFailed(records[-1].error or "every repetition failed")
    result = ExecutionResult(config, metrics.average_runs([rec.metrics for rec in ok]), records,
                             [rec.run_index for rec in records if rec.failed])
    if archive_dir is not None:
        write_archive(result, archive_dir)
    return result


def _short_dir(run_dir):
    # AF_UNIX paths are limited to ~107 bytes; fall back to the temp dir
    if run_dir and len(os.path.join(run_dir, "refbus-0123456789.sock")) > 100:
        return None
    return run_dir


def write_archive(result: ExecutionResult, archive_dir) -> None:
    root = Path(archive_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    for rec in result.records:
        d = root / f"run-{rec.run_index}"
        d.mkdir(exist_ok=True)
        (d / "publisher.json").write_text(json.dumps(
            {**rec.publisher_report, "error": rec.error, "attempts": rec.attempts},
            indent=2, sort_keys=True) + "\n")
        for i, s in enumerate(rec.series):
            np.savetxt(d / f"sub-{i}.csv", s, fmt="%.3f", header="latency_us", comments="")
        if rec.timeline is not None:
            (d / "timeline.csv").write_text(rec.timeline.to_csv())
