"""Plot data files and a minimal SVG line-plot renderer.

Plots are data first: every figure is backed by a whitespace-separated
``.dat`` file with columns x, y, y_lo, y_hi. The SVG layer only draws
polylines, markers and error bars, with no external dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def write_dat(path, x, y, y_lo=None, y_hi=None, header: str = "x y y_lo y_hi") -> Path:
    """Write columns x, y, y_lo, y_hi; missing bounds repeat y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y_lo = y if y_lo is None else np.asarray(y_lo, dtype=float)
    y_hi = y if y_hi is None else np.asarray(y_hi, dtype=float)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# {header}\n")
        for row in zip(x, y, y_lo, y_hi):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return path


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    y_lo: Sequence[float] | None = None
    y_hi: Sequence[float] | None = None


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0**k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    step = 10.0 ** math.floor(math.log10(max(hi - lo, 1e-300)))
    if (hi - lo) / step < 3:
        step /= 2
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


def svg_line_plot(path, series: Sequence[Series], xlabel: str = "x", ylabel: str = "y", title: str = "",
                  logx: bool = False, logy: bool = False, width: int = 560, height: int = 400) -> Path:
    """Render series as polylines with markers and optional error bars."""
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float

    def ok(v, log):
        return np.isfinite(v) and (v > 0 or not log)

    pts = [(tx(a), ty(b)) for s in series for a, b in zip(s.x, s.y) if ok(a, logx) and ok(b, logy)]
    if not pts:
        raise ValueError("nothing to plot")
    xs, ys = zip(*pts)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05
    x0, x1 = x0 - pad * (x1 - x0), x1 + pad * (x1 - x0)
    y0, y1 = y0 - pad * (y1 - y0), y1 + pad * (y1 - y0)
    L, R, T, B = 70, 20, 30, 50

    def X(v):
        return L + (tx(v) - x0) / (x1 - x0) * (width - L - R)

    def Y(v):
        return height - B - (ty(v) - y0) / (y1 - y0) * (height - T - B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{L}" y="{T}" width="{width - L - R}" height="{height - T - B}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1, logx):
        if x0 <= (math.log10(v) if logx else v) <= x1:
            px = X(v)
            out.append(f'<line x1="{px:.2f}" y1="{height - B}" x2="{px:.2f}" y2="{height - B + 4}" stroke="black"/>')
            out.append(f'<text x="{px:.2f}" y="{height - B + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1, logy):
        if y0 <= (math.log10(v) if logy else v) <= y1:
            py = Y(v)
            out.append(f'<line x1="{L - 4}" y1="{py:.2f}" x2="{L}" y2="{py:.2f}" stroke="black"/>')
            out.append(f'<text x="{L - 6}" y="{py + 4:.2f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{(L + width - R) / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{(T + height - B) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {(T + height - B) / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{(L + width - R) / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    for k, s in enumerate(series):
        c = _COLORS[k % len(_COLORS)]
        good = [(a, b) for a, b in zip(s.x, s.y) if ok(a, logx) and ok(b, logy)]
        if len(good) > 1:
            d = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in good)
            out.append(f'<polyline points="{d}" fill="none" stroke="{c}"/>')
        for a, b in good:
            out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{c}"/>')
        if s.y_lo is not None and s.y_hi is not None:
            for a, lo, hi in zip(s.x, s.y_lo, s.y_hi):
                if ok(a, logx) and ok(lo, logy) and ok(hi, logy):
                    out.append(f'<line x1="{X(a):.2f}" y1="{Y(lo):.2f}" x2="{X(a):.2f}" y2="{Y(hi):.2f}" '
                               f'stroke="{c}"/>')
        out.append(f'<text x="{width - R - 5}" y="{T + 14 * (k + 1)}" text-anchor="end" fill="{c}">'
                   f'{escape(s.label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
