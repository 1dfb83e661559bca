"""Minimal hand-written SVG line plots (axes, ticks, series, legend)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f")
W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 55


def _n(v: float) -> str:
    return format(float(v), ".6g")


def _linear_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * span:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _range(vals: list[float]) -> tuple[float, float]:
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot_svg(
    series: list[tuple[str, list[float], list[float]]],
    xlabel: str,
    ylabel: str,
    title: str,
    log: bool = False,
    floor: float = 1e-3,
) -> str:
    """Render ``(label, xs, ys)`` series as an SVG document.

    With ``log=True`` both axes are log10 and values below ``floor`` are
    clipped to it, so a curve hitting zero still shows.
    """
    if not series:
        raise ValueError("need at least one series")
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def tf(v):
        return math.log10(max(v, floor)) if log else float(v)

    xs_all = [tf(x) for _, xs, _ in series for x in xs]
    ys_all = [tf(y) for _, _, ys in series for y in ys]
    if log:
        x0, x1 = math.log10(floor), max(0.0, max(xs_all))
        y0, y1 = math.log10(floor), max(0.0, max(ys_all))
        xt = [float(e) for e in range(math.floor(x0), math.ceil(x1) + 1)]
        yt = [float(e) for e in range(math.floor(y0), math.ceil(y1) + 1)]
    else:
        x0, x1 = _range(xs_all)
        y0, y1 = _range(ys_all)
        xt, yt = _linear_ticks(x0, x1), _linear_ticks(y0, y1)

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + ph - (v - y0) / (y1 - y0) * ph

    def label(v):
        return f"1e{int(v)}" if log else _n(v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{LEFT + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in xt:
        if x0 - 1e-9 <= v <= x1 + 1e-9:
            x = _n(px(v))
            out.append(f'<line x1="{x}" y1="{TOP + ph}" x2="{x}" y2="{TOP + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{x}" y="{TOP + ph + 18}" text-anchor="middle">{label(v)}</text>')
    for v in yt:
        if y0 - 1e-9 <= v <= y1 + 1e-9:
            y = _n(py(v))
            out.append(f'<line x1="{LEFT - 5}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{label(v)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{_n(px(tf(x)))},{_n(py(tf(y)))}" for x, y in zip(xs, ys))
        out.append(f'<polyline class="series" data-label="{escape(name)}" points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        if len(xs) <= 20:
            for x, y in zip(xs, ys):
                out.append(f'<circle cx="{_n(px(tf(x)))}" cy="{_n(py(tf(y)))}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 18 * i
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def polyline_points(svg: str) -> list[list[tuple[float, float]]]:
    """Pixel coordinates of each series polyline (for tests and inspection)."""
    res = []
    for part in svg.split('<polyline class="series"')[1:]:
        pts = part.split('points="', 1)[1].split('"', 1)[0]
        res.append([tuple(float(c) for c in p.split(",")) for p in pts.split()])
    return res


__all__ = ["line_plot_svg", "polyline_points"]
