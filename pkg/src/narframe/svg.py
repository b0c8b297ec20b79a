"""Minimal self-contained SVG emitters for report charts.

Hand-rolled so report generation has no plotting dependency. Output is
deterministic: fixed geometry, fixed float formatting, no timestamps.
"""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

CELL = 28
LEFT_MARGIN = 150
TOP_MARGIN = 110
FONT = "font-family='monospace' font-size='11'"

# Stable categorical palette for stacked bars.
PALETTE = ("#4878a8", "#e49444", "#5f9e6e", "#d1605e", "#857aab",
           "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd")


def _shade(value: float, max_value: float) -> str:
    """White-to-steelblue linear shade for heatmap cells."""
    ratio = 0.0 if max_value <= 0 else min(1.0, value / max_value)
    r = round(255 - (255 - 70) * ratio)
    g = round(255 - (255 - 120) * ratio)
    b = round(255 - (255 - 168) * ratio)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(
    matrix: Sequence[Sequence[float]],
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    title: str = "",
) -> str:
    rows = len(row_labels)
    cols = len(col_labels)
    width = LEFT_MARGIN + cols * CELL + 20
    height = TOP_MARGIN + rows * CELL + 20
    peak = max((v for row in matrix for v in row), default=0)
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
        f"<text x='10' y='20' {FONT} font-size='13'>{escape(title)}</text>" if title else "",
    ]
    for j, label in enumerate(col_labels):
        x = LEFT_MARGIN + j * CELL + CELL // 2
        parts.append(
            f"<text x='{x}' y='{TOP_MARGIN - 8}' {FONT} text-anchor='start' "
            f"transform='rotate(-60 {x} {TOP_MARGIN - 8})'>{escape(label)}</text>"
        )
    for i, label in enumerate(row_labels):
        y = TOP_MARGIN + i * CELL + CELL // 2 + 4
        parts.append(f"<text x='{LEFT_MARGIN - 6}' y='{y}' {FONT} text-anchor='end'>{escape(label)}</text>")
        for j in range(cols):
            value = matrix[i][j]
            x = LEFT_MARGIN + j * CELL
            cy = TOP_MARGIN + i * CELL
            parts.append(
                f"<rect x='{x}' y='{cy}' width='{CELL}' height='{CELL}' "
                f"fill='{_shade(value, peak)}' stroke='#ddd'/>"
            )
            text = f"{value:g}"
            parts.append(
                f"<text x='{x + CELL // 2}' y='{cy + CELL // 2 + 4}' {FONT} "
                f"text-anchor='middle'>{escape(text)}</text>"
            )
    parts.append("</svg>")
    return "\n".join(p for p in parts if p) + "\n"


def stacked_bar_svg(
    categories: Sequence[str],
    series: Mapping[str, Sequence[float]],
    title: str = "",
) -> str:
    """Horizontal stacked bars: one bar per category, one color per series key."""
    bar_height = 22
    gap = 8
    plot_width = 420
    width = LEFT_MARGIN + plot_width + 170
    height = TOP_MARGIN + len(categories) * (bar_height + gap) + 20
    totals = [sum(series[key][i] for key in series) for i in range(len(categories))]
    peak = max(totals, default=0) or 1
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
        f"<text x='10' y='20' {FONT} font-size='13'>{escape(title)}</text>" if title else "",
    ]
    for k, key in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        y = 40 + k * 16
        parts.append(f"<rect x='{LEFT_MARGIN + plot_width + 20}' y='{y - 10}' width='12' height='12' fill='{color}'/>")
        parts.append(f"<text x='{LEFT_MARGIN + plot_width + 38}' y='{y}' {FONT}>{escape(key)}</text>")
    for i, category in enumerate(categories):
        y = TOP_MARGIN + i * (bar_height + gap)
        parts.append(
            f"<text x='{LEFT_MARGIN - 6}' y='{y + bar_height - 6}' {FONT} text-anchor='end'>"
            f"{escape(category)}</text>"
        )
        x = LEFT_MARGIN
        for k, key in enumerate(series):
            value = series[key][i]
            if value <= 0:
                continue
            segment = plot_width * value / peak
            color = PALETTE[k % len(PALETTE)]
            parts.append(
                f"<rect x='{x:.2f}' y='{y}' width='{segment:.2f}' height='{bar_height}' "
                f"fill='{color}' stroke='#fff'/>"
            )
            x += segment
    parts.append("</svg>")
    return "\n".join(p for p in parts if p) + "\n"
