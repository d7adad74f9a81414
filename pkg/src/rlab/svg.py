"""Minimal text-only SVG line charts with optional +-1 std bands."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (count - 1) for k in range(count)]


def line_chart(
    series: list,
    title: str,
    xlabel: str,
    ylabel: str,
    log_x: bool = True,
) -> str:
    """Render series as an SVG document string.

    Each series is a dict with ``x``, ``y``, optional ``std`` and ``label``.
    Non-finite points are skipped.
    """
    def tx(v):
        return math.log2(v) if log_x else v

    xs, ys = [], []
    for s in series:
        std = s.get("std") or [0.0] * len(s["y"])
        for x, y, e in zip(s["x"], s["y"], std):
            if math.isfinite(y) and math.isfinite(e):
                xs.append(tx(x))
                ys.extend([y - e, y + e])
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    pw, ph = WIDTH - PAD_L - PAD_R, HEIGHT - PAD_T - PAD_B

    def px(x):
        return PAD_L + (tx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return PAD_T + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{PAD_L}" y1="{PAD_T + ph}" x2="{PAD_L + pw}" y2="{PAD_T + ph}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{PAD_T + ph}" stroke="black"/>',
    ]
    for yv in _nice_ticks(y0, y1):
        out.append(
            f'<text x="{PAD_L - 6}" y="{_fmt(py(yv) + 4)}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{yv:.3g}</text>'
        )
    ticks = sorted({x for s in series for x in s["x"]})
    for xv in ticks:
        out.append(
            f'<text x="{_fmt(px(xv))}" y="{PAD_T + ph + 16}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{xv:g}</text>'
        )
    out.append(
        f'<text x="{PAD_L + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text x="16" y="{PAD_T + ph / 2}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {PAD_T + ph / 2})">{escape(ylabel)}</text>'
    )

    for k, s in enumerate(series):
        color = COLORS[k % len(COLORS)]
        std = s.get("std") or [0.0] * len(s["y"])
        pts = [(x, y, e) for x, y, e in zip(s["x"], s["y"], std)
               if math.isfinite(y) and math.isfinite(e)]
        if not pts:
            continue
        if any(e > 0 for _, _, e in pts):
            upper = [f"{_fmt(px(x))},{_fmt(py(y + e))}" for x, y, e in pts]
            lower = [f"{_fmt(px(x))},{_fmt(py(y - e))}" for x, y, e in reversed(pts)]
            out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                       f'fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y, _ in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y, _ in pts:
            out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="{color}"/>')
        if s.get("label"):
            ly = PAD_T + 14 + 16 * k
            out.append(f'<text x="{PAD_L + pw - 4}" y="{ly}" text-anchor="end" font-size="11" '
                       f'font-family="sans-serif" fill="{color}">{escape(s["label"])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
