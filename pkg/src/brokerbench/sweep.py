"""Cartesian parameter sweeps, resumable persistence and optimality maps.

Results live under ``<results>/<sweep-id>/``::

    rows.jsonl          one JSON object per configuration, in sweep order
    rows.csv            flat mirror of rows.jsonl
    meta.json           host, clocks, sampler interval, suite version, units
    runs/<hash>/...     raw per-run archives (latencies, publisher report, timeline)
    figs/*.svg          figures written by :func:`brokerbench.report.emit_reports`
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import os
import platform
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .backend import RECEIVE_TIMEOUT_MS, BackendDescriptor, adapter, get_backend
from .errors import AllRunsFailed, BenchError, ConfigError, IncompleteGrid, UnsupportedTransport
from .runner import ExperimentConfig, execute
from .sampler import DEFAULT_INTERVAL_MS

log = logging.getLogger(__name__)

ROW_SCHEMA = "1"
KB = 1024

# swept parameters, in enumeration order (leftmost varies slowest)
SWEPT = ("backends", "transports", "intervals_us", "sizes", "subscribers")

METRIC_DIRECTIONS = {
    "latency.min": "min",
    "latency.avg": "min",
    "latency.p90": "min",
    "latency.p99": "min",
    "latency.max": "min",
    "jitter": "min",
    "throughput": "max",
    "cpu_median": "min",
    "mem_median": "min",
}

_SIZE_RE = re.compile(r"^\s*(\d+)\s*([kKmM]?)[bB]?\s*$")


def parse_size(value) -> int:
    """``32768``, ``"32KB"``, ``"1MB"`` -> bytes (1 KB = 1024 B)."""
    if isinstance(value, int):
        return value
    m = _SIZE_RE.match(str(value))
    if not m:
        raise ConfigError(f"bad payload size {value!r}")
    n, unit = int(m.group(1)), m.group(2).lower()
    return n * {"": 1, "k": KB, "m": KB * KB}[unit]


@dataclass(frozen=True)
class SweepSpec:
    backends: tuple[str, ...] = ("refbus",)
    transports: tuple[str, ...] = ("inproc", "ipc", "tcp")
    intervals_us: tuple[int, ...] = (1000,)
    sizes: tuple[int, ...] = (32 * KB,)
    subscribers: tuple[int, ...] = (1,)
    count: int = 5000
    delay_ms: int = 1000
    repetitions: int = 4
    adapters: tuple[tuple[str, str, tuple[str, ...]], ...] = ()
    pinning: tuple[int, ...] = ()
    receive_timeout_ms: int = RECEIVE_TIMEOUT_MS
    sample_interval_ms: float | None = DEFAULT_INTERVAL_MS
    skip_unsupported: bool = False

    def __post_init__(self):
        for name in SWEPT:
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"parameter set {name!r} is empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"parameter set {name!r} has duplicates")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "sizes", tuple(parse_size(s) for s in self.sizes))

    @property
    def size(self) -> int:
        """Number of configurations: the product of the swept set sizes."""
        n = 1
        for name in SWEPT:
            n *= len(getattr(self, name))
        return n

    def descriptor(self, name: str) -> BackendDescriptor:
        for a_name, command, transports in self.adapters:
            if a_name == name:
                return adapter(a_name, command, transports)
        return get_backend(name)

    def replace(self, **changes) -> "SweepSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adapters"] = {n: {"command": c, "transports": list(t)} for n, c, t in self.adapters}
        return d

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SweepSpec":
        data = dict(data.get("sweep", data))
        adapters = data.pop("adapters", {}) or {}
        aliases = {"backend": "backends", "transport": "transports", "interval_us": "intervals_us",
                   "intervals": "intervals_us", "size": "sizes", "payload_sizes": "sizes",
                   "messages": "count", "subscriber_counts": "subscribers"}
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            key = aliases.get(key.replace("-", "_"), key.replace("-", "_"))
            if key not in names or key == "adapters":
                raise ConfigError(f"unknown sweep parameter {key!r}")
            if key in SWEPT or key == "pinning":
                value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
            kwargs[key] = value
        kwargs["adapters"] = tuple(
            (name, a["command"] if isinstance(a, Mapping) else a,
             tuple(a.get("transports", ("ipc", "tcp"))) if isinstance(a, Mapping) else ("ipc", "tcp"))
            for name, a in sorted(adapters.items())
        )
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_spec(path: str | os.PathLike) -> SweepSpec:
    """Read a TOML (or JSON) sweep file: ``parameter = [values...]``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"sweep spec {str(path)!r} not found")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return SweepSpec.from_mapping(data)


def enumerate_configs(spec: SweepSpec) -> list[ExperimentConfig]:
    """All combinations of the swept sets, lexicographic in declared order."""
    out = []
    descriptors = {name: spec.descriptor(name) for name in spec.backends}
    for backend, transport, interval, size, subs in itertools.product(
        *(getattr(spec, name) for name in SWEPT)
    ):
        try:
            cfg = ExperimentConfig(
                descriptors[backend], transport, subscribers=subs, count=spec.count,
                interval_us=interval, size=size, delay_ms=spec.delay_ms,
                repetitions=spec.repetitions, pinning=spec.pinning,
                receive_timeout_ms=spec.receive_timeout_ms,
                sample_interval_ms=spec.sample_interval_ms,
            )
        except UnsupportedTransport:
            if spec.skip_unsupported:
                continue
            raise
        out.append(cfg)
    return out


@dataclass
class SweepResult:
    rows: list[dict]
    metadata: dict = field(default_factory=dict)
    backends: tuple[str, ...] = ()

    def metric(self, row: dict, name: str) -> float | None:
        if row.get("failed") or row.get("metrics") is None:
            return None
        value = row["metrics"]
        for part in name.split("."):
            value = value.get(part) if isinstance(value, dict) else None
        return value

    def select(self, **where) -> list[dict]:
        return [r for r in self.rows if all(r["key"].get(k) == v for k, v in where.items())]

    def values(self, key: str) -> list:
        """Distinct values of a key field, in first-seen order."""
        seen = {}
        for r in self.rows:
            seen.setdefault(r["key"][key], None)
        return list(seen)

    @property
    def failed_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("failed")]


def _row(config: ExperimentConfig, result=None, error: str | None = None) -> dict:
    row = {
        "schema": ROW_SCHEMA,
        "key": config.key,
        "config_hash": config.config_hash,
        "failed": result is None,
        "error": error,
        "metrics": result.metrics.to_dict() if result is not None else None,
        "partial": bool(result and result.partial),
        "failed_runs": result.failed_runs if result is not None else list(range(config.repetitions)),
        "archive": f"runs/{config.config_hash}",
    }
    return row


def dump_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True, separators=(",", ":"))


CSV_COLUMNS = (
    ["backend", "transport", "interval_us", "size", "subscribers", "count", "delay_ms",
     "repetitions"]
    + ["latency_min_us", "latency_avg_us", "latency_p90_us", "latency_p99_us",
       "latency_max_us", "throughput_MBps", "jitter_us", "received", "sent",
       "cpu_median_pct", "mem_median_pct", "failed", "partial", "config_hash", "archive"]
)


def rows_to_csv(rows: Iterable[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        k = r["key"]
        m = r.get("metrics") or {}
        lat = m.get("latency") or {}

        def f(v):
            return "" if v is None else repr(float(v))

        w.writerow(
            [k["backend"], k["transport"], k["interval_us"], k["size"], k["subscribers"],
             k["count"], k["delay_ms"], k["repetitions"]]
            + [f(lat.get(x)) for x in ("min", "avg", "p90", "p99", "max")]
            + [f(m.get(x)) for x in ("throughput", "jitter", "received", "sent",
                                     "cpu_median", "mem_median")]
            + [int(bool(r["failed"])), int(bool(r.get("partial"))), r["config_hash"], r["archive"]]
        )
    return out.getvalue()


def read_rows(path: str | os.PathLike) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def sweep_metadata(spec: SweepSpec) -> dict:
    return {
        "schema": ROW_SCHEMA,
        "suite_version": __version__,
        "host": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "clock_timestamps": "CLOCK_REALTIME (time.time_ns)",
        "clock_spans": "CLOCK_MONOTONIC (time.monotonic_ns)",
        "sampler_interval_ms": spec.sample_interval_ms,
        "units": {"latency": "us", "throughput": "MB/s (1 MB = 10^6 B)",
                  "size": "bytes (1 KB = 1024 B)", "cpu": "% of one core, summed",
                  "mem": "% of physical memory (USS), summed"},
        "spec": spec.to_dict(),
    }


def run_sweep(
    spec: SweepSpec,
    out_dir: str | os.PathLike,
    force: bool = False,
    executor: Callable = execute,
    progress: Callable[[int, int, ExperimentConfig, dict], None] | None = None,
    limit: int | None = None,
) -> SweepResult:
    """Run every configuration sequentially, persisting each row as it completes.

    Rows already present in ``rows.jsonl`` are skipped unless ``force``.
    ``limit`` stops after that many newly executed rows (useful for staging).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / "rows.jsonl"
    configs = enumerate_configs(spec)
    if force and rows_path.exists():
        rows_path.unlink()
    done = {r["config_hash"]: r for r in read_rows(rows_path)}
    (out / "meta.json").write_text(json.dumps(sweep_metadata(spec), indent=2, sort_keys=True) + "\n")
    executed = 0
    with rows_path.open("a") as fh:
        for i, cfg in enumerate(configs):
            if cfg.config_hash in done:
                continue
            if limit is not None and executed >= limit:
                break
            try:
                res = executor(cfg, archive_dir=out / "runs" / cfg.config_hash)
                row = _row(cfg, res)
            except (AllRunsFailed, BenchError, OSError) as exc:
                log.error("configuration %s failed: %s", cfg.key, exc)
                row = _row(cfg, error=f"{type(exc).__name__}: {exc}")
            fh.write(dump_row(row) + "\n")
            fh.flush()
            done[cfg.config_hash] = row
            executed += 1
            if progress:
                progress(i, len(configs), cfg, row)
    ordered = [done[c.config_hash] for c in configs if c.config_hash in done]
    (out / "rows.csv").write_text(rows_to_csv(ordered))
    return SweepResult(ordered, sweep_metadata(spec), tuple(spec.backends))


def load_result(out_dir: str | os.PathLike) -> SweepResult:
    out = Path(out_dir)
    rows = read_rows(out / "rows.jsonl")
    meta_path = out / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    backends = tuple(meta.get("spec", {}).get("backends", ())) or tuple(
        dict.fromkeys(r["key"]["backend"] for r in rows)
    )
    return SweepResult(rows, meta, backends)


# -- optimality ---------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    winner: str
    tie: bool
    values: tuple[tuple[str, float], ...]


@dataclass
class OptimalityMap:
    """Winning backend per (transport, payload size, subscriber count)."""

    metric: str
    direction: str
    backends: tuple[str, ...]
    cells: dict[tuple[str, int, int], Cell]
    where: dict = field(default_factory=dict)

    def winner(self, transport: str, size: int, subscribers: int) -> str:
        return self.cells[(transport, size, subscribers)].winner

    def transports(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.cells))

    def to_rows(self) -> list[dict]:
        return [
            {"transport": t, "size": s, "subscribers": n, "metric": self.metric,
             "direction": self.direction, "winner": c.winner, "tie": c.tie,
             "values": dict(c.values)}
            for (t, s, n), c in self.cells.items()
        ]


def optimality(
    result: SweepResult,
    metric: str,
    direction: str | None = None,
    backends: Iterable[str] | None = None,
    **where,
) -> OptimalityMap:
    """Best backend per grid cell: argmin for latency/CPU/memory/jitter, argmax for throughput.

    ``where`` filters rows on key fields (e.g. ``interval_us=0``); after
    filtering each (transport, size, subscribers, backend) must be unique.
    Ties go to the earliest backend in declared order and are flagged.
    """
    direction = direction or METRIC_DIRECTIONS.get(metric)
    if direction not in ("min", "max"):
        raise ConfigError(f"direction for {metric!r} must be 'min' or 'max'")
    rows = result.select(**where)
    order = tuple(backends or result.backends or dict.fromkeys(r["key"]["backend"] for r in rows))
    grid: dict[tuple, dict[str, float | None]] = {}
    for r in rows:
        k = r["key"]
        if k["backend"] not in order:
            continue
        cell = grid.setdefault((k["transport"], k["size"], k["subscribers"]), {})
        if k["backend"] in cell:
            raise ConfigError(
                f"several rows for {k['backend']} at {k['transport']}/{k['size']}/{k['subscribers']};"
                " narrow them with where=..."
            )
        cell[k["backend"]] = result.metric(r, metric)
    cells = {}
    better = (lambda a, b: a < b) if direction == "min" else (lambda a, b: a > b)
    for key in sorted(grid, key=lambda t: (t[0], t[1], t[2])):
        vals = grid[key]
        missing = [b for b in order if vals.get(b) is None]
        if missing:
            raise IncompleteGrid(f"cell {key} lacks values for {', '.join(missing)}")
        best = order[0]
        for b in order[1:]:
            if better(vals[b], vals[best]):
                best = b
        tie = sum(vals[b] == vals[best] for b in order) > 1
        cells[key] = Cell(best, tie, tuple((b, vals[b]) for b in order))
    if not cells:
        raise IncompleteGrid("no rows match")
    return OptimalityMap(metric, direction, order, cells, dict(where))
