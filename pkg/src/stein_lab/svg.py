"""Minimal log-log line plots written as SVG text."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

__all__ = ["Series", "loglog_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    label: str
    x: list
    y: list
    dashed: bool = False
    markers: bool = True


def _decades(lo: float, hi: float):
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b = a + 1
    return a, b


def loglog_svg(series, title: str, xlabel: str, ylabel: str,
               width: int = 640, height: int = 440) -> str:
    """Render series as polylines on decade-aligned log axes."""
    pts = [(x, y) for s in series for x, y in zip(s.x, s.y) if x > 0 and y > 0]
    if not pts:
        raise ValueError("nothing positive to plot")
    x0, x1 = _decades(min(p[0] for p in pts), max(p[0] for p in pts))
    y0, y1 = _decades(min(p[1] for p in pts), max(p[1] for p in pts))
    left, right, top, bottom = 80, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (math.log10(x) - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (y1 - math.log10(y)) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(x0, x1 + 1):
        x = sx(10.0 ** e)
        out.append(f'<line x1="{x:.1f}" y1="{top}" x2="{x:.1f}" y2="{top + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{top + ph + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        y = sy(10.0 ** e)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        xy = [(sx(x), sy(y)) for x, y in zip(s.x, s.y) if x > 0 and y > 0]
        if not xy:
            continue
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in xy)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        if s.markers:
            out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>' for a, b in xy)
        ly = top + 16 + 16 * i
        out.append(f'<line x1="{left + pw - 170}" y1="{ly - 4}" x2="{left + pw - 145}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{left + pw - 140}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
