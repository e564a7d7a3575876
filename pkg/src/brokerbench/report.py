"""Tables and SVG figures for sweep results.

The SVG is written by hand so that output is byte-identical for identical
input and no plotting package is needed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from html import escape
from pathlib import Path

from .sweep import KB, OptimalityMap, SweepResult, rows_to_csv

REPORT_METRICS = ("latency.avg", "throughput", "jitter", "cpu_median")

LABELS = {
    "latency.min": "min latency (us)",
    "latency.avg": "average latency (us)",
    "latency.p90": "p90 latency (us)",
    "latency.p99": "p99 latency (us)",
    "latency.max": "max latency (us)",
    "throughput": "throughput (MB/s)",
    "jitter": "jitter (us)",
    "cpu_median": "median CPU (%)",
    "mem_median": "median memory (%)",
}

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f")

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 55


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    if v >= 1e4 or (0 < v < 1e-2):
        return f"{v:.2g}"
    return f"{v:g}" if v == int(v) else f"{v:.3g}"


def size_label(n: int) -> str:
    if n % (KB * KB) == 0:
        return f"{n // (KB * KB)}MB"
    if n % KB == 0:
        return f"{n // KB}KB"
    return f"{n}B"


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">'
                      f'{escape(title)}</text>', *body, "</svg>", ""])


def line_chart(title: str, xlabel: str, ylabel: str, series: dict[str, list[tuple[float, float]]],
               log2x: bool = True, xticklabels=None) -> str:
    """Lines (one per series name) over a shared x axis; y starts at zero."""
    xs = sorted({x for pts in series.values() for x, _ in pts})
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return _svg([f'<text x="{W / 2}" y="{H / 2}" text-anchor="middle">no data</text>'], title)
    fx = (lambda x: math.log2(x)) if log2x and min(xs) > 0 else (lambda x: x)
    x0, x1 = fx(xs[0]), fx(xs[-1])
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    y1 = max(ys) * 1.1 if ys and max(ys) > 0 else 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (fx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - y / y1 * ph

    body = [f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
            f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>']
    labels = xticklabels or {}
    for x in xs:
        body.append(f'<text x="{_fmt(px(x))}" y="{TOP + ph + 16}" text-anchor="middle">'
                    f'{escape(labels.get(x, _tick(x)))}</text>')
    for i in range(6):
        y = y1 * i / 5
        body.append(f'<text x="{LEFT - 6}" y="{_fmt(py(y) + 4)}" text-anchor="end">{_tick(y)}</text>')
        body.append(f'<line x1="{LEFT}" y1="{_fmt(py(y))}" x2="{LEFT + pw}" y2="{_fmt(py(y))}" '
                    'stroke="#ddd"/>')
    body.append(f'<text x="{LEFT + pw / 2}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 16 {TOP + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        path = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        for x, y in pts:
            body.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="{color}">'
                        f'<title>{escape(name)}: {y:.6g}</title></circle>')
        ly = TOP + 10 + 18 * i
        body.append(f'<rect x="{W - RIGHT + 15}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        body.append(f'<text x="{W - RIGHT + 32}" y="{ly + 1}">{escape(name)}</text>')
    return _svg(body, title)


def heatmap(omap: OptimalityMap, transport: str) -> str:
    """Grid of winners: payload size across, subscriber count down."""
    cells = {k: c for k, c in omap.cells.items() if k[0] == transport}
    sizes = sorted({k[1] for k in cells})
    subs = sorted({k[2] for k in cells})
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    cw, ch = pw / max(1, len(sizes)), ph / max(1, len(subs))
    colors = {b: PALETTE[i % len(PALETTE)] for i, b in enumerate(omap.backends)}
    body = []
    for j, n in enumerate(subs):
        y = TOP + ph - (j + 1) * ch
        body.append(f'<text x="{LEFT - 6}" y="{_fmt(y + ch / 2 + 4)}" text-anchor="end">{n}</text>')
        for i, s in enumerate(sizes):
            c = cells[(transport, s, n)]
            x = LEFT + i * cw
            mark = "*" if c.tie else ""
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw)}" height="{_fmt(ch)}" '
                        f'fill="{colors[c.winner]}" fill-opacity="0.55" stroke="white">'
                        f'<title>{escape(c.winner)}{mark}</title></rect>')
            if cw > 30:
                body.append(f'<text x="{_fmt(x + cw / 2)}" y="{_fmt(y + ch / 2 + 4)}" '
                            f'text-anchor="middle" font-size="10">{escape(c.winner[:6])}{mark}</text>')
    for i, s in enumerate(sizes):
        body.append(f'<text x="{_fmt(LEFT + (i + 0.5) * cw)}" y="{TOP + ph + 16}" '
                    f'text-anchor="middle" font-size="10">{size_label(s)}</text>')
    body.append(f'<text x="{LEFT + pw / 2}" y="{H - 12}" text-anchor="middle">payload size</text>')
    body.append(f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" '
                f'transform="rotate(-90 16 {TOP + ph / 2})">subscribers</text>')
    for i, b in enumerate(omap.backends):
        ly = TOP + 10 + 18 * i
        body.append(f'<rect x="{W - RIGHT + 15}" y="{ly - 9}" width="12" height="12" '
                    f'fill="{colors[b]}" fill-opacity="0.55"/>')
        body.append(f'<text x="{W - RIGHT + 32}" y="{ly + 1}">{escape(b)}</text>')
    title = f"best {LABELS.get(omap.metric, omap.metric)} - {transport}"
    return _svg(body, title)


def _series(result: SweepResult, metric: str, x_key: str, **where):
    out: dict[str, list[tuple[float, float]]] = {}
    for b in result.backends or result.values("backend"):
        pts = []
        for r in result.select(backend=b, **where):
            v = result.metric(r, metric)
            if v is not None:
                pts.append((r["key"][x_key], v))
        if pts:
            out[b] = pts
    return out


def _slug(s: str) -> str:
    return s.replace(".", "-").replace("_", "-")


def emit_reports(result: SweepResult, maps: list[OptimalityMap], out_dir,
                 metrics=REPORT_METRICS) -> list[Path]:
    """Write CSV/JSON tables and one SVG per figure; returns the written paths."""
    out = Path(out_dir)
    figs = out / "figs"
    figs.mkdir(parents=True, exist_ok=True)
    written = []

    def write(path: Path, text: str):
        path.write_text(text)
        written.append(path)

    write(out / "rows.csv", rows_to_csv(result.rows))
    write(out / "rows.json", json.dumps(result.rows, indent=1, sort_keys=True) + "\n")

    sizes = sorted(result.values("size"))
    subs = sorted(result.values("subscribers"))
    size_fixed = 32 * KB if 32 * KB in sizes else sizes[len(sizes) // 2] if sizes else None
    for transport in result.values("transport"):
        for interval in result.values("interval_us"):
            tag = f"{transport}-T{interval}"
            for metric in metrics:
                label = LABELS.get(metric, metric)
                if len(sizes) > 1:
                    s = _series(result, metric, "size", transport=transport,
                                interval_us=interval, subscribers=subs[0])
                    write(figs / f"{_slug(metric)}-vs-size-{tag}.svg", line_chart(
                        f"{label} vs payload size ({transport}, T={interval} us, S={subs[0]})",
                        "payload size", label, s, xticklabels={x: size_label(x) for x in sizes}))
                if len(subs) > 1:
                    s = _series(result, metric, "subscribers", transport=transport,
                                interval_us=interval, size=size_fixed)
                    write(figs / f"{_slug(metric)}-vs-subscribers-{tag}.svg", line_chart(
                        f"{label} vs subscribers ({transport}, T={interval} us, "
                        f"P={size_label(size_fixed)})", "subscribers", label, s))

    for omap in maps:
        suffix = "".join(f"-{k}{v}" for k, v in sorted(omap.where.items()))
        name = f"optimality-{_slug(omap.metric)}{suffix}"
        rows = omap.to_rows()
        write(out / f"{name}.json", json.dumps(rows, indent=1, sort_keys=True) + "\n")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["transport", "size", "subscribers", "metric", "direction", "winner", "tie"]
                   + list(omap.backends))
        for r in rows:
            w.writerow([r["transport"], r["size"], r["subscribers"], r["metric"], r["direction"],
                        r["winner"], int(r["tie"])] + [repr(r["values"][b]) for b in omap.backends])
        write(out / f"{name}.csv", buf.getvalue())
        for transport in omap.transports():
            write(figs / f"{name}-{transport}.svg", heatmap(omap, transport))
    return written
