"""Figures of merit computed from raw measurements.

Latencies are one-way, in microseconds, kept in reception order. Timestamps
are integer nanoseconds. Throughput is reported in MB/s with 1 MB = 10**6
bytes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyList, EmptySeries, InsufficientSamples, NoMessages, ZeroSpan

__all__ = [
    "LatencyStats",
    "RunMetrics",
    "ThroughputInput",
    "as_series",
    "average_runs",
    "average_subscribers",
    "jitter",
    "latency_stats",
    "nearest_rank",
    "throughput",
]


@dataclass(frozen=True)
class LatencyStats:
    min: float
    avg: float
    p90: float
    p99: float
    max: float


@dataclass(frozen=True)
class ThroughputInput:
    received: int
    payload_size: int
    first_send_ns: int
    last_recv_ns: int


@dataclass(frozen=True)
class RunMetrics:
    """Metrics of one subscriber, one run, or one averaged configuration.

    ``jitter`` is None when fewer than two messages arrived; ``cpu_median``
    and ``mem_median`` are None when resource sampling was off.
    """

    latency: LatencyStats
    throughput: float
    jitter: float | None
    received: float
    sent: float
    cpu_median: float | None = None
    mem_median: float | None = None

    @property
    def lost(self) -> float:
        return self.sent - self.received

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        d = dict(d)
        d["latency"] = LatencyStats(**d["latency"])
        return cls(**d)


def as_series(values: Iterable[float]) -> np.ndarray:
    """Return ``values`` as a float64 array, rejecting negative or non-finite entries."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0):
        raise ValueError("latencies must be finite and non-negative")
    return arr


def nearest_rank(sorted_values: Sequence[float], percent: int) -> float:
    """Nearest-rank percentile: element at 1-based rank ceil(percent/100 * n)."""
    n = len(sorted_values)
    if n == 0:
        raise EmptySeries("percentile of an empty series")
    # integer ceil avoids 0.9 * 100 style float drift
    rank = max(1, -(-percent * n // 100))
    return float(sorted_values[rank - 1])


def latency_stats(series: Iterable[float]) -> LatencyStats:
    arr = as_series(series)
    if arr.size == 0:
        raise EmptySeries("no latencies recorded")
    s = np.sort(arr)
    return LatencyStats(
        min=float(s[0]),
        avg=float(np.mean(s)),
        p90=nearest_rank(s, 90),
        p99=nearest_rank(s, 99),
        max=float(s[-1]),
    )


def jitter(series: Iterable[float]) -> float:
    """Mean absolute difference of consecutive latencies, in reception order."""
    arr = as_series(series)
    if arr.size < 2:
        raise InsufficientSamples(f"jitter needs >= 2 latencies, got {arr.size}")
    return float(np.mean(np.abs(np.diff(arr))))


def throughput(inp: ThroughputInput) -> float:
    if inp.received <= 0:
        raise NoMessages("no messages received")
    span_ns = inp.last_recv_ns - inp.first_send_ns
    if span_ns <= 0:
        raise ZeroSpan(f"non-positive span {span_ns} ns")
    return inp.received * inp.payload_size / (span_ns / 1e9) / 1e6


def _mean(values: list) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return math.fsum(present) / len(present)


def _average(items: Sequence[RunMetrics]) -> RunMetrics:
    if not items:
        raise EmptyList("nothing to average")
    if len(items) == 1:
        return items[0]
    lat = LatencyStats(
        **{
            f.name: _mean([getattr(m.latency, f.name) for m in items])
            for f in dataclasses.fields(LatencyStats)
        }
    )
    rest = {
        f.name: _mean([getattr(m, f.name) for m in items])
        for f in dataclasses.fields(RunMetrics)
        if f.name != "latency"
    }
    return RunMetrics(latency=lat, **rest)


def average_subscribers(per_subscriber: Sequence[RunMetrics]) -> RunMetrics:
    """Field-wise mean over the subscribers of a single run.

    Optional fields are averaged over the entries where they are present.
    """
    return _average(per_subscriber)


def average_runs(per_run: Sequence[RunMetrics]) -> RunMetrics:
    """Field-wise mean over repetitions (each already subscriber-averaged)."""
    return _average(per_run)
