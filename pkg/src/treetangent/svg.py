"""Minimal standalone SVG line plots.

Plots are pure functions of tabular data, so every figure can be rebuilt
offline from the CSV it was drawn from (see ``plot_csv``).
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for mult in (1, 2, 5, 10):
        if (hi - lo) / (step * mult) <= n:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(step):
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v):
    return f"{v:.4g}"


def line_plot(series, title="", xlabel="", ylabel="", logx=False, logy=False, dashed=()) -> str:
    """Render ``{label: (xs, ys)}`` as an SVG document string.

    Non-finite points (and non-positive ones on log axes) are skipped.
    Series named in ``dashed`` are drawn with a dashed stroke.
    """
    def tx(v):
        return math.log10(v) if logx else v

    def ty(v):
        return math.log10(v) if logy else v

    clean = {}
    for label, (xs, ys) in series.items():
        pts = [
            (tx(float(x)), ty(float(y)))
            for x, y in zip(xs, ys)
            if math.isfinite(float(x)) and math.isfinite(float(y))
            and (not logx or float(x) > 0) and (not logy or float(y) > 0)
        ]
        if pts:
            clean[label] = pts
    all_pts = [p for pts in clean.values() for p in pts] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
    y0, y1 = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#333"/>',
    ]
    for v in _ticks(x0, x1):
        x = px(v)
        lab = _fmt(10**v) if logx else _fmt(v)
        out.append(f'<line x1="{x:.2f}" y1="{MARGIN["top"] + ph}" x2="{x:.2f}" y2="{MARGIN["top"] + ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{x:.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1):
        y = py(v)
        lab = _fmt(10**v) if logy else _fmt(v)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{y:.2f}" x2="{MARGIN["left"]}" y2="{y:.2f}" stroke="#333"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{y + 4:.2f}" text-anchor="end">{lab}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        cy = MARGIN["top"] + ph / 2
        out.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">{escape(ylabel)}</text>')

    for k, (label, pts) in enumerate(clean.items()):
        color = PALETTE[k % len(PALETTE)]
        path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        dash = ' stroke-dasharray="6,4"' if label in dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{path}"/>')
        ly = MARGIN["top"] + 14 + 16 * k
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(csv_path, x: str, y: str, group=None, out_path=None, where=None, **kwargs) -> str:
    """Build a line plot straight from a CSV file.

    ``group`` names one column or a tuple of columns whose values split the
    rows into series; ``where`` keeps only rows whose columns equal the given
    strings. Lines starting with ``#`` are skipped. Writes to ``out_path``
    when given; returns the SVG text.
    """
    with Path(csv_path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if where:
        rows = [r for r in rows if all(r[k] == str(v) for k, v in where.items())]
    if isinstance(group, str):
        group = (group,)
    series = {}
    for r in rows:
        key = " ".join(f"{g}={r[g]}" for g in group) if group else y
        xs, ys = series.setdefault(key, ([], []))
        xs.append(float(r[x]))
        ys.append(float(r[y]))
    svg = line_plot(series, **kwargs)
    if out_path is not None:
        Path(out_path).write_text(svg, encoding="utf-8")
    return svg
