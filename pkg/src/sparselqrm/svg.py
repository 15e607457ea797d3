"""Minimal SVG output for sparsity grids and line plots."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def pattern_grid(sparse: np.ndarray, cell: int = 10, title: str = "") -> str:
    """Black cells are nonzero, white cells are (near-)zero."""
    sparse = np.atleast_2d(np.asarray(sparse, dtype=bool))
    m, n = sparse.shape
    top = 20 if title else 0
    w, h = n * cell + 2, m * cell + 2 + top
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    if title:
        parts.append(f'<text x="2" y="14" font-family="sans-serif" font-size="12">{_esc(title)}</text>')
    parts.append(f'<rect x="0.5" y="{top + 0.5}" width="{n * cell + 1}" height="{m * cell + 1}" fill="white" stroke="gray"/>')
    for i, j in zip(*np.nonzero(~sparse)):
        parts.append(f'<rect x="{1 + j * cell}" y="{top + 1 + i * cell}" width="{cell}" height="{cell}" fill="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def pattern_ascii(sparse: np.ndarray) -> str:
    sparse = np.atleast_2d(np.asarray(sparse, dtype=bool))
    return "\n".join("".join("." if s else "#" for s in row) for row in sparse) + "\n"


def line_plot(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    xlabel: str,
    ylabel: str,
    width: int = 480,
    height: int = 320,
    title: str = "",
) -> str:
    """Plot named ``(x, y)`` series on shared linear axes."""
    pad_l, pad_r, pad_t, pad_b = 60, 110, 30, 40
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ok = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = (xs[ok], ys[ok]) if ok.any() else (np.zeros(1), np.zeros(1))
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">']
    if title:
        out.append(f'<text x="{pad_l}" y="18" font-size="13">{_esc(title)}</text>')
    out.append(f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{pad_l - 4}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{pad_l + pw / 2}" y="{height - 6}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{pad_t + ph / 2}" transform="rotate(-90 14 {pad_t + ph / 2})" text-anchor="middle">{_esc(ylabel)}</text>')
    for k, (name, (x, y)) in enumerate(series.items()):
        c = colors[k % len(colors)]
        pts = [(px(a), py(b)) for a, b in zip(x, y) if np.isfinite(a) and np.isfinite(b)]
        if pts:
            coords = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{c}" stroke-width="1.5"/>')
            out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{c}"/>' for a, b in pts)
        ly = pad_t + 12 + 16 * k
        out.append(f'<line x1="{pad_l + pw + 8}" y1="{ly}" x2="{pad_l + pw + 24}" y2="{ly}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw + 28}" y="{ly + 4}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
