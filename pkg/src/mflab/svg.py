"""Static line/scatter charts written directly as SVG (800 x 600 viewBox)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

W, H = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 80, 30, 50, 70
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


@dataclass
class Series:
    label: str
    x: list
    y: list
    style: str = "line"  # line | points | dashed


@dataclass
class Chart:
    name: str
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    logx: bool = False
    logy: bool = False

    def add(self, label, x, y, style="line"):
        self.series.append(Series(label, [float(v) for v in x], [float(v) for v in y], style))
        return self


def _usable(v, log):
    return math.isfinite(v) and (v > 0 if log else True)


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 8)
        return [float(k) for k in range(a, b + 1, step)]
    span = hi - lo
    raw = span / 6 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _fmt(v, log):
    if log:
        return f"1e{int(v)}"
    return f"{v:.6g}"


def render(chart: Chart) -> str:
    """SVG document for ``chart``; non-finite (or nonpositive on log axes) points are skipped."""
    tx = (lambda v: math.log10(v)) if chart.logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if chart.logy else (lambda v: v)
    pts = []
    for s in chart.series:
        pts.append([(tx(a), ty(b)) for a, b in zip(s.x, s.y) if _usable(a, chart.logx) and _usable(b, chart.logy)])
    flat = [p for ps in pts for p in ps]
    if flat:
        x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
        y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="28" text-anchor="middle" font-size="18">{escape(chart.title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1, chart.logx):
        if x0 <= v <= x1:
            X = px(v)
            out.append(f'<line x1="{X:.2f}" y1="{TOP + ph}" x2="{X:.2f}" y2="{TOP + ph + 6}" stroke="black"/>')
            out.append(f'<text x="{X:.2f}" y="{TOP + ph + 22}" text-anchor="middle" font-size="12">{_fmt(v, chart.logx)}</text>')
    for v in _ticks(y0, y1, chart.logy):
        if y0 <= v <= y1:
            Y = py(v)
            out.append(f'<line x1="{LEFT - 6}" y1="{Y:.2f}" x2="{LEFT}" y2="{Y:.2f}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 10}" y="{Y + 4:.2f}" text-anchor="end" font-size="12">{_fmt(v, chart.logy)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 20}" text-anchor="middle" font-size="14">{escape(chart.xlabel)}</text>')
    out.append(
        f'<text x="20" y="{TOP + ph / 2:.1f}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {TOP + ph / 2:.1f})">{escape(chart.ylabel)}</text>'
    )
    for k, (s, ps) in enumerate(zip(chart.series, pts)):
        color = PALETTE[k % len(PALETTE)]
        if s.style == "points":
            for a, b in ps:
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>')
        elif ps:
            dash = ' stroke-dasharray="6 4"' if s.style == "dashed" else ""
            coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in ps)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = TOP + 18 + 18 * k
        out.append(f'<line x1="{LEFT + pw - 170}" y1="{ly}" x2="{LEFT + pw - 145}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{LEFT + pw - 140}" y="{ly + 4}" font-size="12">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(chart: Chart, out_dir):
    path = Path(out_dir) / f"{chart.name}.svg"
    path.write_text(render(chart))
    return path
