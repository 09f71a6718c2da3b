"""Minimal SVG bar histograms, written by hand to avoid a plotting dependency."""

from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 300
MARGIN = dict(left=56, right=16, top=32, bottom=44)


def _fmt(x: float) -> str:
    return format(float(x), ".4g")


def histogram_svg(
    values: Optional[Sequence[float]] = None,
    bins=20,
    *,
    edges: Optional[Sequence[float]] = None,
    counts: Optional[Sequence[float]] = None,
    title: str = "",
    xlabel: str = "",
    reference: Optional[float] = None,
    reference_label: str = "",
) -> str:
    """Render a histogram as an SVG document.

    Pass raw ``values`` (binned with ``np.histogram``) or precomputed
    ``edges``/``counts``. ``reference`` draws a dashed vertical line.
    """
    if edges is None or counts is None:
        counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    x0, x1 = float(edges[0]), float(edges[-1])
    if reference is not None:
        x0, x1 = min(x0, reference), max(x1, reference)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    ymax = max(float(counts.max()) if counts.size else 1.0, 1.0)

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + ph - y / ymax * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        if c <= 0:
            continue
        parts.append(
            f'<rect x="{sx(lo):.2f}" y="{sy(c):.2f}" width="{max(sx(hi) - sx(lo) - 1, 0.5):.2f}" '
            f'height="{sy(0) - sy(c):.2f}" fill="#4c72b0"/>'
        )
    base = sy(0)
    parts.append(
        f'<line x1="{MARGIN["left"]}" y1="{base:.2f}" x2="{MARGIN["left"] + pw}" y2="{base:.2f}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" x2="{MARGIN["left"]}" y2="{base:.2f}" stroke="black"/>'
    )
    for t in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{sx(t):.2f}" y="{base + 14:.2f}" text-anchor="middle">{_fmt(t)}</text>')
    for t in np.linspace(0, ymax, 5):
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    if reference is not None:
        rx = sx(reference)
        parts.append(
            f'<line x1="{rx:.2f}" y1="{MARGIN["top"]}" x2="{rx:.2f}" y2="{base:.2f}" '
            'stroke="#c44e52" stroke-dasharray="4 3" stroke-width="1.5"/>'
        )
        if reference_label:
            parts.append(
                f'<text x="{rx + 4:.2f}" y="{MARGIN["top"] + 12}" fill="#c44e52">{escape(reference_label)}</text>'
            )
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        parts.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
