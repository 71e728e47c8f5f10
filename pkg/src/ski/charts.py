"""Minimal deterministic SVG line charts.

Hand-rolled on purpose: output bytes depend only on the data, and the scale
metadata is embedded as attributes (`data-xscale`, `data-x`) so tests and
downstream tools can inspect charts without a renderer. Zero x-values on a log
axis are pinned to a dedicated slot left of the smallest positive tick.
"""

from __future__ import annotations

import math
from pathlib import Path

from .core import ConfigError

WIDTH, HEIGHT = 480, 320
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 34, 46


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v == v else "nan"


def _x_positions(xs: list[float], log_x: bool) -> list[float]:
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    if not log_x:
        lo, hi = min(xs), max(xs)
        span = (hi - lo) or 1.0
        return [x0 + (x - lo) / span * (x1 - x0) for x in xs]
    positive = sorted({x for x in xs if x > 0})
    if not positive:
        raise ConfigError("log x-axis needs at least one positive value")
    lo, hi = math.log10(positive[0]), math.log10(positive[-1])
    span = (hi - lo) or 1.0
    has_zero = any(x == 0 for x in xs)
    zero_slot = x0
    start = x0 + (36 if has_zero else 0)
    out = []
    for x in xs:
        if x == 0:
            out.append(zero_slot)
        else:
            out.append(start + (math.log10(x) - lo) / span * (x1 - start))
    return out


def line_chart_svg(path, points: list[tuple[float, float]], title: str,
                   xlabel: str, ylabel: str, log_x: bool = False):
    """Write a single-series line chart; points are (x, y) pairs."""
    if not points:
        raise ConfigError("chart needs at least one point")
    points = sorted(points)
    xs = [float(x) for x, _ in points]
    ys = [float(y) for _, y in points]
    if log_x and any(x < 0 for x in xs):
        raise ConfigError("log x-axis cannot place negative values")
    px = _x_positions(xs, log_x)
    y_lo, y_hi = min(ys), max(ys)
    yspan = (y_hi - y_lo) or 1.0
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    py = [y0 + (y - y_lo) / yspan * (y1 - y0) for y in ys]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xscale="{"log" if log_x else "linear"}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{MARGIN_L}" y1="{y0}" x2="{WIDTH - MARGIN_R}" y2="{y0}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{y0}" x2="{MARGIN_L}" y2="{MARGIN_T}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT / 2:.1f})">{ylabel}</text>',
    ]
    poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
    parts.append(f'<polyline points="{poly}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for (xv, yv), x, y in zip(points, px, py):
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.5" fill="#1f77b4" '
            f'data-x="{xv!r}" data-y="{yv!r}"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{y0 + 16}" text-anchor="middle" font-size="10">{_fmt(xv)}</text>'
        )
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * yspan
        y = y0 + frac * (y1 - y0)
        parts.append(f'<text x="{MARGIN_L - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="10">{_fmt(yv)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
