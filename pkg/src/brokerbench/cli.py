"""Command-line front end.

    brokerbench run --backend refbus --transport tcp --profile latency
    brokerbench sweep --spec configs/size-sweep.toml --out results
    brokerbench analyze --results results/size-sweep
    brokerbench report --results results/size-sweep
    brokerbench list-backends

Exit status: 0 success, 1 usage error, 2 every run failed, 3 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .backend import BackendKind, Transport, adapter, get_backend, list_backends
from .errors import AllRunsFailed, BenchError, IncompleteGrid
from .refbus import DEFAULT_CAPACITY, DEFAULT_SOCKET_BUFFER
from .refbus import descriptor as refbus_descriptor
from .runner import ExperimentConfig, execute
from .sweep import (
    METRIC_DIRECTIONS,
    SWEPT,
    SweepSpec,
    enumerate_configs,
    load_result,
    load_spec,
    optimality,
    parse_size,
    run_sweep,
)

EXIT_OK, EXIT_USAGE, EXIT_ALL_FAILED, EXIT_PARTIAL = 0, 1, 2, 3
CORES_ENV = "BROKERBENCH_CORES"

# Baseline configurations: only the publishing interval differs per metric.
PROFILES = {"latency": 1000, "throughput": 0, "cpu": 0}
BASELINE = dict(subscribers=1, count=5000, size=32 * 1024, delay_ms=1000, repetitions=4)
ANALYZE_METRICS = ("latency.avg", "throughput", "cpu_median")


class UsageError(BenchError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliInvocation:
    subcommand: str
    config: ExperimentConfig | None = None
    spec: SweepSpec | None = None
    results: Path | None = None
    out: Path | None = None
    json: bool = False
    force: bool = False
    limit: int | None = None
    metrics: tuple[str, ...] = ANALYZE_METRICS
    direction: str | None = None
    where: dict = field(default_factory=dict)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _cores(arg: str | None) -> tuple[int, ...]:
    text = arg if arg is not None else os.environ.get(CORES_ENV, "")
    try:
        return _int_list(text)
    except ValueError:
        raise UsageError(f"core list must be comma-separated integers, got {text!r}") from None


def _size(text: str) -> int:
    try:
        return parse_size(text)
    except BenchError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="brokerbench", description="Brokerless PUB/SUB benchmarking suite")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one configuration R times")
    run.add_argument("--backend", default="refbus")
    run.add_argument("--adapter-command", help="treat --backend as a subprocess adapter run by this command")
    run.add_argument("--transport", default="inproc")
    run.add_argument("--profile", choices=sorted(PROFILES), default="latency")
    run.add_argument("--subscribers", type=int, default=BASELINE["subscribers"])
    run.add_argument("--count", type=int, default=BASELINE["count"])
    run.add_argument("--size", type=_size, default=BASELINE["size"])
    run.add_argument("--interval-us", type=int, default=None)
    run.add_argument("--delay-ms", type=int, default=BASELINE["delay_ms"])
    run.add_argument("--repetitions", type=int, default=BASELINE["repetitions"])
    run.add_argument("--endpoint")
    run.add_argument("--cores", help=f"comma-separated core ids (default: ${CORES_ENV})")
    run.add_argument("--receive-timeout-ms", type=int, default=5000)
    run.add_argument("--sample-interval-ms", type=float, default=100.0)
    run.add_argument("--no-sampling", action="store_true")
    run.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY, help="refbus queue capacity")
    run.add_argument("--sock-buf", type=int, default=DEFAULT_SOCKET_BUFFER,
                     help="refbus socket buffer bytes")
    run.add_argument("--out", type=Path, help="archive directory for raw per-run data")
    run.add_argument("--json", action="store_true")

    sw = sub.add_parser("sweep", help="run a Cartesian parameter sweep")
    sw.add_argument("--spec", type=Path, help="TOML/JSON sweep file")
    sw.add_argument("--set", action="append", default=[], metavar="KEY=V1,V2",
                    help="override one parameter (repeatable)")
    sw.add_argument("--out", type=Path, default=Path("results"))
    sw.add_argument("--id", dest="sweep_id")
    sw.add_argument("--cores")
    sw.add_argument("--force", action="store_true", help="re-run rows that already exist")
    sw.add_argument("--limit", type=int, help="stop after this many new rows")
    sw.add_argument("--json", action="store_true")

    an = sub.add_parser("analyze", help="optimality maps from sweep results")
    an.add_argument("--results", type=Path, required=True)
    an.add_argument("--metric", action="append", choices=sorted(METRIC_DIRECTIONS))
    an.add_argument("--direction", choices=("min", "max"))
    an.add_argument("--where", action="append", default=[], metavar="KEY=VALUE")
    an.add_argument("--json", action="store_true")

    rp = sub.add_parser("report", help="write tables and SVG figures for sweep results")
    rp.add_argument("--results", type=Path, required=True)
    rp.add_argument("--json", action="store_true")

    lb = sub.add_parser("list-backends", help="show registered backends")
    lb.add_argument("--json", action="store_true")
    return p


def _override_value(key: str, text: str):
    if key in SWEPT:
        items = [x.strip() for x in text.split(",") if x.strip()]
        if key in ("intervals_us", "subscribers"):
            return [int(x) for x in items]
        if key == "sizes":
            return [parse_size(x) for x in items]
        return items
    if key == "pinning":
        return list(_int_list(text))
    if key == "skip_unsupported":
        return text.lower() in ("1", "true", "yes")
    return float(text) if key == "sample_interval_ms" else int(text)


def parse_and_validate(argv=None) -> CliInvocation:
    args = build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO)
    inv = CliInvocation(args.subcommand, json=getattr(args, "json", False))
    try:
        if args.subcommand == "run":
            inv.config = _run_config(args)
            inv.out = args.out
        elif args.subcommand == "sweep":
            data = load_spec(args.spec).to_dict() if args.spec else {}
            for item in args.set:
                key, sep, value = item.partition("=")
                if not sep:
                    raise UsageError(f"--set expects KEY=VALUES, got {item!r}")
                canon = _canonical_key(key)
                data[canon] = _override_value(canon, value)
            if args.cores is not None or os.environ.get(CORES_ENV):
                data["pinning"] = list(_cores(args.cores))
            inv.spec = SweepSpec.from_mapping(data)
            sweep_id = args.sweep_id or (args.spec.stem if args.spec else "sweep")
            inv.out = args.out / sweep_id
            inv.force, inv.limit = args.force, args.limit
            enumerate_configs(inv.spec)  # validate every combination up front
        elif args.subcommand in ("analyze", "report"):
            if not (args.results / "rows.jsonl").is_file():
                raise UsageError(f"no rows.jsonl under {args.results}")
            inv.results = args.results
            if args.subcommand == "analyze":
                inv.metrics = tuple(args.metric or ANALYZE_METRICS)
                inv.direction = args.direction
                inv.where = dict(_where(w) for w in args.where)
    except UsageError:
        raise
    except (BenchError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return inv


def _canonical_key(key: str) -> str:
    key = key.replace("-", "_")
    aliases = {"backend": "backends", "transport": "transports", "interval_us": "intervals_us",
               "intervals": "intervals_us", "size": "sizes"}
    return aliases.get(key, key)


def _where(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise UsageError(f"--where expects KEY=VALUE, got {text!r}")
    key = key.replace("-", "_")
    if key == "size":
        return key, parse_size(value)
    return key, int(value) if value.lstrip("-").isdigit() else value


def _run_config(args) -> ExperimentConfig:
    transport = Transport.parse(args.transport)
    preset = PROFILES[args.profile]
    if args.interval_us is None:
        interval = preset
    elif args.profile != "latency" and args.interval_us != 0:
        raise UsageError(f"--profile {args.profile} measures at T=0; drop --interval-us "
                         f"or use --profile latency")
    else:
        interval = args.interval_us
    if args.adapter_command:
        if transport is Transport.INPROC:
            raise UsageError("a subprocess adapter cannot use the in-process transport "
                             "(publisher and subscribers would be in different address spaces)")
        desc = adapter(args.backend, args.adapter_command)
    else:
        desc = get_backend(args.backend)
        if desc.kind is BackendKind.IN_TREE and desc.name == "refbus":
            desc = refbus_descriptor(args.capacity, args.sock_buf)
    return ExperimentConfig(
        desc, transport, subscribers=args.subscribers, count=args.count,
        interval_us=interval, size=args.size, delay_ms=args.delay_ms,
        repetitions=args.repetitions, endpoint=args.endpoint, pinning=_cores(args.cores),
        receive_timeout_ms=args.receive_timeout_ms,
        sample_interval_ms=None if args.no_sampling else args.sample_interval_ms,
    )


def _emit(inv: CliInvocation, doc, text: str) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True) if inv.json else text)


def _fmt_metrics(m: dict) -> str:
    lat = m["latency"]

    def f(v, spec=".1f"):
        return "-" if v is None else format(v, spec)

    return (f"latency us  min {f(lat['min'])}  avg {f(lat['avg'])}  p90 {f(lat['p90'])}  "
            f"p99 {f(lat['p99'])}  max {f(lat['max'])}\n"
            f"throughput  {f(m['throughput'], '.2f')} MB/s   jitter {f(m['jitter'], '.2f')} us\n"
            f"received    {f(m['received'])} / {f(m['sent'])}\n"
            f"cpu median  {f(m['cpu_median'])} %   mem median {f(m['mem_median'], '.4f')} %")


def all_maps(result, metrics=ANALYZE_METRICS, direction=None, where=None):
    """One map per metric and publishing interval; cells with failures are skipped."""
    maps, skipped = [], []
    intervals = [where["interval_us"]] if where and "interval_us" in where else result.values("interval_us")
    for metric in metrics:
        for interval in intervals:
            w = dict(where or {}, interval_us=interval)
            try:
                maps.append(optimality(result, metric, direction, **w))
            except IncompleteGrid as exc:
                skipped.append(f"{metric} T={interval}: {exc}")
    return maps, skipped


def main(argv=None) -> int:
    try:
        inv = parse_and_validate(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _dispatch(inv)
    except AllRunsFailed as exc:
        print(f"error: every repetition failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(inv: CliInvocation) -> int:
    if inv.subcommand == "list-backends":
        docs = [d.to_dict() for d in list_backends()]
        text = "\n".join(f"{d['name']:<10} {d['kind']:<20} {', '.join(d['transports'])}" for d in docs)
        _emit(inv, docs, text)
        return EXIT_OK

    if inv.subcommand == "run":
        res = execute(inv.config, archive_dir=inv.out)
        doc = {"config": inv.config.to_dict(), "metrics": res.metrics.to_dict(),
               "metadata": res.metadata}
        _emit(inv, doc, _fmt_metrics(doc["metrics"])
              + (f"\nfailed runs: {res.failed_runs}" if res.partial else ""))
        return EXIT_PARTIAL if res.partial else EXIT_OK

    if inv.subcommand == "sweep":
        total = inv.spec.size

        def progress(i, n, cfg, row):
            if not inv.json:
                status = "FAILED" if row["failed"] else "ok"
                print(f"[{i + 1}/{n}] {cfg.key} {status}", file=sys.stderr)

        result = run_sweep(inv.spec, inv.out, force=inv.force, progress=progress, limit=inv.limit)
        failed = result.failed_rows
        doc = {"results": str(inv.out), "rows": len(result.rows), "configurations": total,
               "failed": len(failed)}
        _emit(inv, doc, f"{len(result.rows)}/{total} rows in {inv.out} ({len(failed)} failed)")
        if failed and len(failed) == len(result.rows):
            return EXIT_ALL_FAILED
        if failed or any(r.get("partial") for r in result.rows):
            return EXIT_PARTIAL
        return EXIT_OK

    result = load_result(inv.results)
    if inv.subcommand == "analyze":
        maps, skipped = all_maps(result, inv.metrics, inv.direction, inv.where)
        from .report import emit_reports

        lines = []
        for m in maps:
            lines.append(f"{m.metric} ({m.direction}) {m.where}")
            for (t, s, n), c in m.cells.items():
                lines.append(f"  {t:<7} size {s:>8}  S {n:>2}  -> {c.winner}{' (tie)' if c.tie else ''}")
        lines += [f"skipped {s}" for s in skipped]
        emit_reports(result, maps, inv.results, metrics=())
        doc = {"maps": [m.to_rows() for m in maps], "skipped": skipped}
        _emit(inv, doc, "\n".join(lines))
        return EXIT_OK

    from .report import emit_reports

    maps, skipped = all_maps(result)
    paths = emit_reports(result, maps, inv.results)
    _emit(inv, {"written": [str(p) for p in paths], "skipped": skipped},
          "\n".join(str(p) for p in paths))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
