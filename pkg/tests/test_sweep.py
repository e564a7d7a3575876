import itertools
import json
import random

import pytest

from brokerbench import stub
from brokerbench.backend import register
from brokerbench.errors import ConfigError, IncompleteGrid, UnsupportedTransport
from brokerbench.report import emit_reports
from brokerbench.sweep import (
    SweepResult,
    SweepSpec,
    enumerate_configs,
    load_result,
    load_spec,
    optimality,
    parse_size,
    run_sweep,
)

for _i, _lat in enumerate((10.0, 20.0, 5.0)):
    register(stub.descriptor(stub.constant_latency(_lat), name=f"stub{_i}"), replace=True)


def fast(**kw):
    base = dict(backends=["stub"], transports=["inproc"], count=20, delay_ms=0, repetitions=1,
                sample_interval_ms=None)
    base.update(kw)
    return SweepSpec.from_mapping(base)


def test_parse_size():
    assert parse_size("32KB") == 32768 and parse_size("1MB") == 1 << 20
    assert parse_size(64) == 64 and parse_size("512k") == 512 * 1024
    with pytest.raises(ConfigError):
        parse_size("lots")


def test_enumerate_counts_and_order():
    spec = fast(backends=["stub0", "stub1"], sizes=[64, 128, 256])
    configs = enumerate_configs(spec)
    assert len(configs) == spec.size == 6
    assert [(c.backend.name, c.size) for c in configs] == list(
        itertools.product(["stub0", "stub1"], [64, 128, 256]))


def test_enumerate_singleton_and_grid():
    assert len(enumerate_configs(fast())) == 1
    spec = fast(sizes=[2**k for k in range(6, 16)], subscribers=[1, 2, 4, 8])
    assert len(enumerate_configs(spec)) == 40


def test_random_specs_enumerate_product():
    rng = random.Random(5)
    for _ in range(30):
        sets = dict(backends=rng.sample(["stub", "stub0", "stub1", "stub2"], rng.randint(1, 4)),
                    intervals_us=rng.sample([0, 10, 100, 1000], rng.randint(1, 4)),
                    sizes=rng.sample([64, 128, 1024, 4096, 32768], rng.randint(1, 5)),
                    subscribers=rng.sample([1, 2, 3, 4, 8], rng.randint(1, 5)))
        configs = enumerate_configs(fast(**sets))
        expected = 1
        for v in sets.values():
            expected *= len(v)
        assert len(configs) == expected
        assert len({c.config_hash for c in configs}) == expected


def test_empty_or_duplicate_sets_rejected():
    with pytest.raises(ConfigError):
        fast(sizes=[])
    with pytest.raises(ConfigError):
        fast(sizes=[64, 64])
    with pytest.raises(ConfigError):
        fast(colour=["blue"])


def test_unsupported_transport_strict_or_skipped():
    with pytest.raises(UnsupportedTransport):
        enumerate_configs(fast(transports=["inproc", "tcp"]))
    assert len(enumerate_configs(fast(transports=["inproc", "tcp"], skip_unsupported=True))) == 1


def test_load_spec_toml_and_missing(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('backends = ["stub"]\ntransports = ["inproc"]\nsizes = ["1KB", "2KB"]\n'
                 'subscribers = [1, 2]\ncount = 10\n[adapters.echo]\ncommand = "x"\n')
    spec = load_spec(p)
    assert spec.sizes == (1024, 2048) and spec.count == 10 and spec.size == 4
    assert spec.adapters == (("echo", "x", ("ipc", "tcp")),)
    with pytest.raises(ConfigError):
        load_spec(tmp_path / "nope.toml")


def test_sweep_writes_rows_and_resumes(tmp_path):
    spec = fast(sizes=[64, 128], subscribers=[1, 2])
    out = tmp_path / "s"
    full = run_sweep(spec, out)
    assert len(full.rows) == 4 and not full.failed_rows
    reference = (out / "rows.jsonl").read_bytes()
    assert all(r["metrics"]["latency"]["avg"] == 10.0 for r in full.rows)
    assert (out / "runs" / full.rows[0]["config_hash"] / "config.json").is_file()

    # interrupted after 1 row, then resumed
    out2 = tmp_path / "r"
    run_sweep(spec, out2, limit=1)
    assert len((out2 / "rows.jsonl").read_text().splitlines()) == 1
    calls = []

    def counting(cfg, **kw):
        calls.append(cfg.config_hash)
        from brokerbench.runner import execute
        return execute(cfg, **kw)

    run_sweep(spec, out2, executor=counting)
    assert len(calls) == 3
    assert (out2 / "rows.jsonl").read_bytes() == reference
    assert (out2 / "rows.csv").read_text() == (out / "rows.csv").read_text()
    run_sweep(spec, out2, executor=counting)
    assert len(calls) == 3
    meta = json.loads((out / "meta.json").read_text())
    assert meta["units"]["latency"] == "us"


def test_failed_configuration_recorded(tmp_path):
    from brokerbench.errors import AllRunsFailed

    def boom(cfg, **kw):
        raise AllRunsFailed("nothing received")

    res = run_sweep(fast(sizes=[64, 128]), tmp_path, executor=boom)
    assert len(res.failed_rows) == 2
    assert res.rows[0]["metrics"] is None and "AllRunsFailed" in res.rows[0]["error"]
    assert "nothing received" in res.rows[0]["error"]


# -- optimality on synthetic rows ---------------------------------------------

def synthetic(values: dict, backends) -> SweepResult:
    """values: {(backend, transport, size, subs): metric}"""
    rows = []
    for (b, t, s, n), v in values.items():
        rows.append({"key": {"backend": b, "transport": t, "size": s, "subscribers": n,
                             "interval_us": 0},
                     "failed": v is None,
                     "metrics": None if v is None else {"latency": {"avg": v}, "throughput": v}})
    return SweepResult(rows, {}, tuple(backends))


def brute(values, backends, direction):
    out = {}
    for (b, t, s, n), v in values.items():
        out.setdefault((t, s, n), {})[b] = v
    pick = min if direction == "min" else max
    return {k: next(b for b in backends if d[b] == pick(d.values())) for k, d in out.items()}


def random_grid(rng, backends):
    ts = rng.sample(["inproc", "ipc", "tcp"], rng.randint(1, 3))
    ss = rng.sample([64, 1024, 32768, 524288], rng.randint(1, 4))
    ns = rng.sample([1, 2, 4, 8], rng.randint(1, 4))
    return {(b, t, s, n): float(rng.randint(1, 6))
            for b, t, s, n in itertools.product(backends, ts, ss, ns)}


def test_single_backend_wins_everywhere():
    vals = {("only", "tcp", s, 1): float(s) for s in (64, 128)}
    m = optimality(synthetic(vals, ["only"]), "latency.avg")
    assert {c.winner for c in m.cells.values()} == {"only"}
    assert not any(c.tie for c in m.cells.values())


@pytest.mark.parametrize("metric,direction", [("latency.avg", "min"), ("throughput", "max")])
def test_optimality_matches_brute_force(metric, direction):
    rng = random.Random(11)
    for _ in range(50):
        backends = ["a", "b", "c"][: rng.randint(2, 3)]
        vals = random_grid(rng, backends)
        m = optimality(synthetic(vals, backends), metric)
        assert m.direction == direction
        assert {k: c.winner for k, c in m.cells.items()} == brute(vals, backends, direction)
        # monotone increasing transform preserves every winner
        m2 = optimality(synthetic({k: 2 * v + 1 for k, v in vals.items()}, backends), metric)
        assert {k: c.winner for k, c in m2.cells.items()} == {k: c.winner for k, c in m.cells.items()}


def test_ties_go_to_first_declared_backend():
    vals = {("b", "tcp", 64, 1): 3.0, ("a", "tcp", 64, 1): 3.0, ("c", "tcp", 64, 1): 4.0}
    m = optimality(synthetic(vals, ["b", "a", "c"]), "latency.avg")
    cell = m.cells[("tcp", 64, 1)]
    assert cell.winner == "b" and cell.tie


def test_missing_cell_is_an_error():
    vals = {("a", "tcp", 64, 1): 1.0, ("b", "tcp", 64, 1): None}
    with pytest.raises(IncompleteGrid):
        optimality(synthetic(vals, ["a", "b"]), "latency.avg")
    vals = {("a", "tcp", 64, 1): 1.0}
    with pytest.raises(IncompleteGrid):
        optimality(synthetic(vals, ["a", "b"]), "latency.avg")


def test_optimality_from_stub_sweep(tmp_path):
    spec = fast(backends=["stub0", "stub1", "stub2"], sizes=[64, 256], subscribers=[1, 2])
    res = run_sweep(spec, tmp_path)
    m = optimality(res, "latency.avg", interval_us=1000)
    assert {c.winner for c in m.cells.values()} == {"stub2"}
    assert len(m.cells) == 4
    loaded = load_result(tmp_path)
    assert loaded.backends == ("stub0", "stub1", "stub2")
    assert optimality(loaded, "latency.avg").cells == m.cells


def test_reports_are_deterministic(tmp_path):
    spec = fast(backends=["stub0", "stub2"], sizes=[64, 1024, 32768], subscribers=[1, 2])
    res = run_sweep(spec, tmp_path / "a")
    maps = [optimality(res, "latency.avg"), optimality(res, "throughput")]
    first = emit_reports(res, maps, tmp_path / "a")
    snap = {p.name: p.read_bytes() for p in first}
    second = emit_reports(load_result(tmp_path / "a"), maps, tmp_path / "a")
    assert {p.name: p.read_bytes() for p in second} == snap
    names = set(snap)
    assert "latency-avg-vs-size-inproc-T1000.svg" in names
    assert "throughput-vs-subscribers-inproc-T1000.svg" in names
    assert "optimality-latency-avg-inproc.svg" in names
    assert snap["latency-avg-vs-size-inproc-T1000.svg"].startswith(b"<svg")
