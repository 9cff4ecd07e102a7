"""Dependency-free SVG line charts from CSV columns."""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

__all__ = ["PlotError", "read_columns", "svg_line_chart", "plot_csv"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = (60, 20, 30, 50)  # left, right, top, bottom


class PlotError(ValueError):
    pass


def read_columns(path, x: str, ys) -> tuple[list[float], dict[str, list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for c in (x, *ys):
            if c not in header:
                raise PlotError(f"column {c!r} not found in {path}; available: {', '.join(header)}")
        rows = list(reader)
    if len(rows) < 2:
        raise PlotError(f"{path} needs at least 2 data rows, found {len(rows)}")
    try:
        xs = [float(r[x]) for r in rows]
        cols = {y: [float(r[y]) for r in rows] for y in ys}
    except ValueError as exc:
        raise PlotError(f"non-numeric value in {path}: {exc}") from None
    return xs, cols


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


def _span(vals):
    finite = [v for v in vals if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def svg_line_chart(xs, series: dict, x_label: str, title: str = "") -> str:
    """Standalone SVG: frame, five ticks per axis, axis labels, legend and
    one ``<polyline>`` per series. Non-finite points are skipped."""
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    x0, x1 = _span(xs)
    y0, y1 = _span([v for ys in series.values() for v in ys])

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<g id="axes" stroke="black" fill="none"><rect x="{left}" y="{top}" width="{pw}" height="{ph}"/></g>',
        '<g id="ticks" font-family="sans-serif" font-size="10" fill="black">',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_fmt(px(xv))}" y="{top + ph + 14}" text-anchor="middle">{_tick(xv)}</text>')
        out.append(f'<text x="{left - 4}" y="{_fmt(py(yv) + 3)}" text-anchor="end">{_tick(yv)}</text>')
    out.append("</g>")
    out.append(
        f'<text id="x-label" x="{left + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{escape(x_label)}</text>'
    )
    y_label = ", ".join(series)
    out.append(
        f'<text id="y-label" x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(y_label)}</text>'
    )
    if title:
        out.append(
            f'<text id="title" x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
            f'font-size="13">{escape(title)}</text>'
        )
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(
            f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(xs, ys) if math.isfinite(a) and math.isfinite(b)
        )
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"><title>{escape(name)}</title></polyline>')
        ly = top + 12 + 14 * k
        out.append(
            f'<text x="{left + pw - 6}" y="{ly}" text-anchor="end" font-family="sans-serif" font-size="11" '
            f'fill="{color}">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(csv_path, x: str, ys, out_path, title: str = "") -> None:
    if not ys:
        raise PlotError("at least one y column is required")
    xs, cols = read_columns(csv_path, x, ys)
    with open(out_path, "w") as fh:
        fh.write(svg_line_chart(xs, cols, x, title))
