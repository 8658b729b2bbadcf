"""Dependency-free SVG scatter and line plots."""

from __future__ import annotations

import math
from html import escape
from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H, PAD = 480, 360, 48


def _bounds(values, pad_frac=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    if not math.isfinite(lo) or not math.isfinite(hi):
        lo, hi = -1.0, 1.0
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = pad_frac * (hi - lo)
    return lo - pad, hi + pad


def _frame(title, xlabel, ylabel, xb, yb):
    def fmt(v):
        return f"{v:.3g}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{H - PAD + 16}" text-anchor="middle" font-size="10">{fmt(xb[0])}</text>',
        f'<text x="{W - PAD}" y="{H - PAD + 16}" text-anchor="middle" font-size="10">{fmt(xb[1])}</text>',
        f'<text x="{PAD - 4}" y="{H - PAD}" text-anchor="end" font-size="10">{fmt(yb[0])}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4}" text-anchor="end" font-size="10">{fmt(yb[1])}</text>',
    ]
    return parts


def _mapper(xb, yb):
    def to_px(x, y):
        px = PAD + (x - xb[0]) / (xb[1] - xb[0]) * (W - 2 * PAD)
        py = H - PAD - (y - yb[0]) / (yb[1] - yb[0]) * (H - 2 * PAD)
        return px, py

    return to_px


def scatter_svg(path, series: dict, title: str = "", xlabel: str = "x", ylabel: str = "y") -> None:
    """``series`` maps a label to an ``(n, 2)`` point array."""
    pts = np.concatenate([np.asarray(p, dtype=float).reshape(-1, 2) for p in series.values()])
    xb, yb = _bounds(pts[:, 0]), _bounds(pts[:, 1])
    to_px = _mapper(xb, yb)
    parts = _frame(title, xlabel, ylabel, xb, yb)
    for k, (label, p) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        for x, y in np.asarray(p, dtype=float).reshape(-1, 2):
            px, py = to_px(x, y)
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2" fill="{color}" fill-opacity="0.6"/>')
        parts.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 * (k + 1)}" text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def line_svg(path, x: Sequence[float], series: dict, title: str = "", xlabel: str = "x", ylabel: str = "y") -> None:
    """``series`` maps a label to y-values aligned with ``x``; ``None`` entries are skipped."""
    x = np.asarray(x, dtype=float)
    ys = [v for s in series.values() for v in s if v is not None]
    xb, yb = _bounds(x), _bounds(ys if ys else [0.0])
    to_px = _mapper(xb, yb)
    parts = _frame(title, xlabel, ylabel, xb, yb)
    for k, (label, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = [to_px(xi, yi) for xi, yi in zip(x, ys) if yi is not None]
        if pts:
            coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            parts.extend(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{color}"/>' for px, py in pts)
        parts.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 * (k + 1)}" text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
