"""Minimal deterministic SVG output for curve frames and log-log error plots."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

INITIAL_COLOR = "#d62728"
FINAL_COLOR = "#1f77b4"
MID_COLOR = "#555555"
SERIES_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Frame:
    """Maps data coordinates into a padded, aspect-preserving pixel box (y up)."""

    def __init__(self, lo, hi, width: int, height: int, pad: int):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        span = np.maximum(hi - lo, 1e-12)
        self.scale = min((width - 2 * pad) / span[0], (height - 2 * pad) / span[1])
        self.off = np.array([width, height]) / 2.0 - self.scale * np.array([1.0, -1.0]) * (lo + hi) / 2.0

    def points(self, nodes: np.ndarray) -> str:
        px = self.off[0] + self.scale * nodes[:, 0]
        py = self.off[1] - self.scale * nodes[:, 1]
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py))


def _header(width: int, height: int) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]


def curves_svg(
    curves: Sequence[np.ndarray],
    labels: Sequence[str] = (),
    width: int = 480,
    height: int = 480,
    stroke_width: float = 1.5,
    overlay_style: bool = True,
    title: str | None = None,
    bounds=None,
) -> str:
    """Closed polylines; with ``overlay_style`` the first is red, the last blue, the rest dashed."""
    pad = 24
    allnodes = np.concatenate([np.asarray(c, dtype=float) for c in curves])
    lo, hi = (allnodes.min(axis=0), allnodes.max(axis=0)) if bounds is None else bounds
    frame = _Frame(lo, hi, width, height, pad)
    out = _header(width, height)
    if title:
        out.append(f'<text x="{width // 2}" y="16" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12">{title}</text>')
    n = len(curves)
    for i, c in enumerate(curves):
        style = ""
        color = MID_COLOR
        if overlay_style and n > 1:
            if i == 0:
                color = INITIAL_COLOR
            elif i == n - 1:
                color = FINAL_COLOR
            else:
                style = ' stroke-dasharray="5,3"'
        elif not overlay_style:
            color = FINAL_COLOR
        label = f' data-label="{labels[i]}"' if i < len(labels) else ""
        out.append(
            f'<polygon points="{frame.points(np.asarray(c, dtype=float))}" fill="none" '
            f'stroke="{color}" stroke-width="{_fmt(stroke_width)}"{style}{label}/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loglog_svg(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    slope: float = 2.0,
    width: int = 520,
    height: int = 400,
    xlabel: str = "h",
    ylabel: str = "error",
) -> str:
    """Log-log plot of each ``(x, y)`` series with a reference line of the given slope."""
    pad = 56
    xs = [x for xv, yv in series.values() for x, y in zip(xv, yv) if x > 0 and y > 0]
    ys = [y for xv, yv in series.values() for x, y in zip(xv, yv) if x > 0 and y > 0]
    out = _header(width, height)
    if not xs:
        out.append("</svg>")
        return "\n".join(out) + "\n"
    lx0, lx1 = math.log10(min(xs)), math.log10(max(xs))
    ly0, ly1 = math.log10(min(ys)), math.log10(max(ys))
    lx0, lx1 = lx0 - 0.1, lx1 + 0.1
    ly0, ly1 = ly0 - 0.3, ly1 + 0.3

    def px(x):
        return pad + (math.log10(x) - lx0) / (lx1 - lx0) * (width - 2 * pad)

    def py(y):
        return height - pad - (math.log10(y) - ly0) / (ly1 - ly0) * (height - 2 * pad)

    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{pad}" y2="{pad}" stroke="black"/>')
    out.append(f'<text x="{width // 2}" y="{height - 16}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{height // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16,{height // 2})">{ylabel}</text>')
    # reference line anchored at the smallest-h point of the first series
    first = next(iter(series.values()))
    pairs = sorted((x, y) for x, y in zip(*first) if x > 0 and y > 0)
    if pairs:
        x0, y0 = pairs[0]
        x1 = max(xs)
        y1 = y0 * (x1 / x0) ** slope
        out.append(f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(y0 / 2))}" x2="{_fmt(px(x1))}" '
                   f'y2="{_fmt(py(y1 / 2))}" stroke="black" stroke-dasharray="4,4"/>')
        out.append(f'<text x="{_fmt(px(x1) - 4)}" y="{_fmt(py(y1 / 2) + 14)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">slope {_fmt(slope)}</text>')
    for i, (name, (xv, yv)) in enumerate(series.items()):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        pts = [(px(x), py(y)) for x, y in sorted(zip(xv, yv)) if x > 0 and y > 0]
        out.append(f'<polyline points="{" ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        for a, b in pts:
            out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{color}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
