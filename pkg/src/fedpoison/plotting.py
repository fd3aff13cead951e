"""Static SVG line charts, written by hand so output bytes are deterministic."""

from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .errors import ConfigError

__all__ = ["PLOT_KINDS", "line_chart_svg", "plot_svg", "series_from_records"]

PLOT_KINDS = ("bsa_vs_ratio", "acc_vs_ratio", "series")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 30, 60


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def line_chart_svg(lines: Sequence, x_label: str, y_label: str, title: str = "",
                   y_range: Optional[tuple] = (0.0, 1.0)) -> str:
    """``lines`` is a sequence of (name, [(x, y), ...]); y=None points are skipped."""
    pts_all = [(x, y) for _, pts in lines for x, y in pts if y is not None]
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    if pts_all:
        xs = [p[0] for p in pts_all]
        x0, x1 = min(xs), max(xs)
    else:
        x0, x1 = 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y_range is None:
        ys = [p[1] for p in pts_all] or [0.0, 1.0]
        y0, y1 = min(ys), max(ys)
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
    else:
        y0, y1 = y_range

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="18" text-anchor="middle">{escape(title)}</text>')
    # axes and ticks
    out.append(f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>')
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>')
    for i in range(6):
        xv = x0 + (x1 - x0) * i / 5
        yv = y0 + (y1 - y0) * i / 5
        out.append(f'<text x="{sx(xv):.2f}" y="{TOP + ph + 16}" text-anchor="middle">{_fmt(xv)}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{sy(yv) + 4:.2f}" text-anchor="end">{_fmt(yv)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">{escape(y_label)}</text>')

    if not pts_all:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
                   f'fill="gray">no data</text>')
    for i, (name, pts) in enumerate(lines):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts if y is not None)
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = TOP + 14 + 18 * i
        out.append(f'<line x1="{WIDTH - RIGHT + 10}" y1="{ly - 4}" x2="{WIDTH - RIGHT + 30}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 36}" y="{ly}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _table_lines(rows, metric: str):
    groups = {}
    for row in rows:
        key = f"{row['attack']} ({row['setting']})"
        groups.setdefault(key, []).append((100.0 * float(row["ratio"]), row.get(metric)))
    return [(name, sorted(pts)) for name, pts in sorted(groups.items())]


def series_from_records(records) -> list:
    lines = [("acc", [(r.t, r.acc) for r in records])]
    if any(r.asr is not None for r in records):
        lines.append(("asr", [(r.t, r.asr) for r in records]))
    if any(r.edge_asr is not None for r in records):
        lines.append(("edge_asr", [(r.t, r.edge_asr) for r in records]))
    return lines


def plot_svg(data, kind: str, path: Optional[str] = None) -> str:
    """Render a sweep table (ratio plots) or a record list (``series``)."""
    if kind == "bsa_vs_ratio":
        svg = line_chart_svg(_table_lines(data, "bsa"), "poison ratio (%)", "BSA", "BSA vs poison ratio")
    elif kind == "acc_vs_ratio":
        svg = line_chart_svg(_table_lines(data, "acc_mean"), "poison ratio (%)", "ACC", "ACC vs poison ratio")
    elif kind == "series":
        svg = line_chart_svg(series_from_records(data), "round", "acc / asr", "per-round metrics")
    else:
        raise ConfigError(f"plot kind must be one of {PLOT_KINDS}, got {kind!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
