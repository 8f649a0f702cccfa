"""Minimal deterministic SVG line charts from summary CSVs."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

__all__ = ["emit_svg", "read_series"]

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 160, "top": 40, "bottom": 60}
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def _num(s: str) -> float | None:
    try:
        v = float(s)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def read_series(csv_path, x: str, y: str, series: str | None = None) -> dict[str, list[tuple[str, float]]]:
    """Group ``(x, y)`` pairs by the ``series`` column, keeping file order."""
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in (x, y) + ((series,) if series else ()):
            if c not in cols:
                raise ValueError(f"{csv_path}: missing column {c!r}")
        out: dict[str, list[tuple[str, float]]] = {}
        for row in reader:
            yv = _num(row[y])
            if yv is None:
                continue
            out.setdefault(row[series] if series else y, []).append((row[x], yv))
    return out


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def emit_svg(data: dict[str, list[tuple[str, float]]], out_path=None, *, x_label: str = "x", y_label: str = "y",
             title: str = "") -> str:
    """Render series as polylines; numeric x values get a linear axis, others are categorical."""
    if not data or all(not pts for pts in data.values()):
        raise ValueError("no data to plot")
    xs_raw = [px for pts in data.values() for px, _ in pts]
    numeric = all(_num(v) is not None for v in xs_raw)
    if numeric:
        xvals = sorted({_num(v) for v in xs_raw})
        to_x = _num
    else:
        cats = list(dict.fromkeys(xs_raw))
        xvals = list(range(len(cats)))
        to_x = cats.index
    ys = [py for pts in data.values() for _, py in pts]
    x0, x1 = min(xvals), max(xvals)
    y0, y1 = min(ys), max(ys)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + ph - (v - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    ax, ay = MARGIN["left"], MARGIN["top"] + ph
    parts.append(f'<line x1="{ax}" y1="{ay}" x2="{ax + pw}" y2="{ay}" stroke="black"/>')
    parts.append(f'<line x1="{ax}" y1="{MARGIN["top"]}" x2="{ax}" y2="{ay}" stroke="black"/>')
    xticks = _ticks(x0, x1) if numeric else xvals
    for t in xticks:
        label = f"{t:.4g}" if numeric else escape(cats[t])
        parts.append(f'<line x1="{sx(t):.2f}" y1="{ay}" x2="{sx(t):.2f}" y2="{ay + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(t):.2f}" y="{ay + 20}" text-anchor="middle" font-size="11">{label}</text>')
    for t in _ticks(y0, y1):
        parts.append(f'<line x1="{ax - 5}" y1="{sy(t):.2f}" x2="{ax}" y2="{sy(t):.2f}" stroke="black"/>')
        parts.append(f'<text x="{ax - 8}" y="{sy(t) + 4:.2f}" text-anchor="end" font-size="11">{t:.4g}</text>')
    parts.append(f'<text x="{ax + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">{escape(x_label)}</text>')
    parts.append(f'<text x="18" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" font-size="13" '
                 f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2:.2f})">{escape(y_label)}</text>')
    for k, (name, pts) in enumerate(data.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = sorted((to_x(px), py) for px, py in pts)
        path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in coords)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{path}"/>')
        for a, b in coords:
            parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 16 * k + 8
        lx = WIDTH - MARGIN["right"] + 12
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if out_path is not None:
        Path(out_path).write_text(svg)
    return svg
