"""Per-process CPU and unique-memory (USS) sampling.

CPU is percent of one core, so a multi-process aggregate may exceed 100.
Memory is USS as a percentage of total physical memory. At every tick the
values of all sampled processes are summed; the reported figure is the
median of those sums.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
import threading
import time
from dataclasses import dataclass, field

import psutil

from .errors import EmptyTimeline, NoSuchProcess, SamplingUnsupported

log = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 100


@dataclass(frozen=True)
class Sample:
    cpu_percent: float
    uss_bytes: int
    uss_percent: float


@dataclass
class ResourceTimeline:
    """Samples aligned on ``sample_times``; None marks a process that was gone."""

    sample_times: list[float] = field(default_factory=list)
    per_process: dict[int, list[Sample | None]] = field(default_factory=dict)
    interval_ms: float = DEFAULT_INTERVAL_MS
    memory_source: str = "uss"

    def __len__(self) -> int:
        return len(self.sample_times)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t_s", "pid", "cpu_percent", "uss_bytes", "uss_percent"])
        t0 = self.sample_times[0] if self.sample_times else 0.0
        for i, t in enumerate(self.sample_times):
            for pid in sorted(self.per_process):
                s = self.per_process[pid][i]
                if s is None:
                    w.writerow([f"{t - t0:.6f}", pid, "", "", ""])
                else:
                    w.writerow([f"{t - t0:.6f}", pid, f"{s.cpu_percent:.3f}", s.uss_bytes,
                                f"{s.uss_percent:.6f}"])
        return out.getvalue()


def aggregate(timeline: ResourceTimeline) -> dict[str, float]:
    """Sum over processes at each tick, then take the median over ticks."""
    cpu_sums, mem_sums = [], []
    for i in range(len(timeline.sample_times)):
        row = [series[i] for series in timeline.per_process.values() if series[i] is not None]
        if not row:
            continue
        cpu_sums.append(sum(s.cpu_percent for s in row))
        mem_sums.append(sum(s.uss_percent for s in row))
    if not cpu_sums:
        raise EmptyTimeline("no complete sample row")
    return {"cpu_median": statistics.median(cpu_sums), "mem_median": statistics.median(mem_sums)}


class Sampler:
    """Background sampler thread; ``stop()`` returns the timeline.

    >>> s = Sampler({os.getpid()}, 50).start()   # doctest: +SKIP
    >>> timeline = s.stop()                      # doctest: +SKIP
    """

    def __init__(self, pids, interval_ms: float = DEFAULT_INTERVAL_MS):
        if interval_ms <= 0:
            raise ValueError("interval must be positive")
        self.interval_ms = interval_ms
        self._procs = {}
        for pid in sorted(set(pids)):
            try:
                p = psutil.Process(pid)
                p.cpu_percent(None)
            except psutil.NoSuchProcess:
                raise NoSuchProcess(f"process {pid} does not exist") from None
            self._procs[pid] = p
        self._total_mem = psutil.virtual_memory().total
        self.timeline = ResourceTimeline(per_process={pid: [] for pid in self._procs},
                                         interval_ms=interval_ms)
        self._use_uss = self._probe_uss()
        if not self._use_uss:
            self.timeline.memory_source = "rss"
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="sampler", daemon=True)

    def _probe_uss(self) -> bool:
        for p in self._procs.values():
            try:
                p.memory_full_info().uss
            except (psutil.AccessDenied, AttributeError, NotImplementedError):
                log.warning("USS unavailable for pid %d; falling back to RSS", p.pid)
                return False
            except psutil.NoSuchProcess:
                pass
        return True

    def _read(self, p: psutil.Process) -> Sample | None:
        try:
            with p.oneshot():
                cpu = p.cpu_percent(None)
                mem = p.memory_full_info().uss if self._use_uss else p.memory_info().rss
        except (psutil.NoSuchProcess, psutil.ZombieProcess):
            return None
        return Sample(cpu, mem, mem / self._total_mem * 100)

    def tick(self) -> None:
        self.timeline.sample_times.append(time.monotonic())
        for pid, p in self._procs.items():
            self.timeline.per_process[pid].append(self._read(p))

    def _loop(self) -> None:
        period = self.interval_ms / 1000
        next_t = time.monotonic() + period
        while not self._stop.wait(max(0.0, next_t - time.monotonic())):
            self.tick()
            next_t += period

    def start(self) -> "Sampler":
        self._thread.start()
        return self

    def stop(self) -> ResourceTimeline:
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join()
        return self.timeline


def sample_loop(pids, interval_ms: float, stop: threading.Event) -> ResourceTimeline:
    """Sample ``pids`` every ``interval_ms`` until ``stop`` is set (blocking)."""
    s = Sampler(pids, interval_ms)
    s._stop = stop
    s._loop()
    return s.timeline


def check_supported() -> None:
    try:
        psutil.Process().memory_full_info()
    except (psutil.AccessDenied, AttributeError, NotImplementedError) as exc:
        raise SamplingUnsupported(str(exc)) from exc
