"""Self-contained SVG line charts for the plot-data CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=70, right=150, top=30, bottom=40)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
          "#7f7f7f", "#bcbd22", "#17becf")
MAX_POINTS = 2000


def read_plot_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric columns of a plot CSV (comment lines skipped, blanks as NaN)."""
    with open(path) as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header = rows[0]
    data = np.array([[float(v) if v != "" else np.nan for v in r] for r in rows[1:]], dtype=float)
    return header, data.reshape(len(rows) - 1, len(header))


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def line_chart(x, series: dict[str, np.ndarray], title: str = "", log_y: bool = False) -> str:
    """SVG text of a line chart; non-finite (and, on a log axis, non-positive) points are gaps."""
    x = np.asarray(x, dtype=float)
    stride = max(1, len(x) // MAX_POINTS)
    x = x[::stride]
    ys = {k: np.asarray(v, dtype=float)[::stride] for k, v in series.items()}
    if log_y:
        ys = {k: np.where(v > 0, v, np.nan) for k, v in ys.items()}
        ys = {k: np.log10(v) for k, v in ys.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.zeros(0)])
    y_lo, y_hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = (x.min(), x.max()) if x.size else (0.0, 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return MARGIN["top"] + (y_hi - v) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for t in _ticks(x_lo, x_hi):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - MARGIN["bottom"] + 15}" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        label = f"1e{t:g}" if log_y else f"{t:.4g}"
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{sy(t):.1f}" '
                   f'y2="{sy(t):.1f}" stroke="#e0e0e0"/>')
        out.append(f'<text x="{MARGIN["left"] - 5}" y="{sy(t) + 4:.1f}" '
                   f'text-anchor="end">{label}</text>')
    for i, (name, y) in enumerate(ys.items()):
        color = COLORS[i % len(COLORS)]
        segments, current = [], []
        for xv, yv in zip(x, y):
            if np.isfinite(yv):
                current.append(f"{sx(xv):.1f},{sy(yv):.1f}")
            elif current:
                segments.append(current)
                current = []
        if current:
            segments.append(current)
        for seg in segments:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                       f'points="{" ".join(seg)}"/>')
        ly = MARGIN["top"] + 14 * i + 8
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" x2="{lx + 18}" y1="{ly}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_from_csv(csv_path, svg_path=None, log_y: bool | None = None) -> Path:
    """Render a plot CSV (first column on the x axis) next to it as ``.svg``."""
    csv_path = Path(csv_path)
    header, data = read_plot_csv(csv_path)
    if log_y is None:
        log_y = "error" in csv_path.stem
    series = {name: data[:, j] for j, name in enumerate(header) if j > 0}
    svg_path = csv_path.with_suffix(".svg") if svg_path is None else Path(svg_path)
    svg_path.write_text(line_chart(data[:, 0], series, csv_path.stem.replace("_", " "), log_y))
    return svg_path
