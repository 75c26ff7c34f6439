"""Deterministic SVG figures: TV time series, time-state heat map, KDE panels.

Output depends only on the input numbers: fixed canvas, fixed number
formatting, fonts referenced by family name.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 50
FONT = 'font-family="DejaVu Sans, Arial, sans-serif" font-size="12"'


class PlotInputError(ValueError):
    """Missing columns or empty inputs."""


def _f(v: float) -> str:
    return f"{v:.3f}"


def _header(w=WIDTH, h=HEIGHT) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
    ]


def _axes(x0, y0, w, h, xlabel, ylabel, xr, yr) -> list:
    out = [
        f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" height="{_f(h)}" fill="none" stroke="black"/>',
        f'<text x="{_f(x0 + w / 2)}" y="{_f(y0 + h + 32)}" text-anchor="middle" {FONT}>{xlabel}</text>',
        f'<text x="{_f(x0 - 36)}" y="{_f(y0 + h / 2)}" text-anchor="middle" {FONT} '
        f'transform="rotate(-90 {_f(x0 - 36)} {_f(y0 + h / 2)})">{ylabel}</text>',
        f'<text x="{_f(x0)}" y="{_f(y0 + h + 14)}" text-anchor="start" {FONT}>{xr[0]:.3g}</text>',
        f'<text x="{_f(x0 + w)}" y="{_f(y0 + h + 14)}" text-anchor="end" {FONT}>{xr[1]:.3g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y0 + h)}" text-anchor="end" {FONT}>{yr[0]:.3g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y0 + 10)}" text-anchor="end" {FONT}>{yr[1]:.3g}</text>',
    ]
    return out


def _range(v):
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def tv_series_svg(times: Sequence[float], tv: Sequence[float], title: str = "TV distance") -> str:
    times = np.asarray(times, dtype=float)
    tv = np.asarray(tv, dtype=float)
    if len(times) == 0 or len(times) != len(tv):
        raise PlotInputError("tv_series needs equal-length, nonempty time and tv columns")
    x0, y0, w, h = MARGIN, MARGIN, WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    xr = _range(times)
    yr = (0.0, max(float(tv.max()) * 1.1, 1e-12))
    px = x0 + (times - xr[0]) / (xr[1] - xr[0]) * w
    py = y0 + h - (tv - yr[0]) / (yr[1] - yr[0]) * h
    pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(px, py))
    out = _header()
    out += _axes(x0, y0, w, h, "t", "TV", xr, yr)
    out.append(f'<text x="{_f(WIDTH / 2)}" y="24" text-anchor="middle" {FONT}>{title}</text>')
    out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _gray(v: float) -> str:
    # white (0) to dark blue (1)
    r = int(round(255 * (1 - v) + 20 * v))
    g = int(round(255 * (1 - v) + 40 * v))
    b = int(round(255 * (1 - v) + 120 * v))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(times: Sequence[float], ensembles: Sequence[np.ndarray], bins: int = 60, coord: int = 0) -> str:
    """Time-state density: one column per checkpoint, binned on the common state range."""
    if len(ensembles) == 0:
        raise PlotInputError("heatmap needs at least one checkpoint")
    cols = [np.asarray(e, dtype=float).reshape(len(e), -1)[:, coord] for e in ensembles]
    lo = min(float(c.min()) for c in cols)
    hi = max(float(c.max()) for c in cols)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    dens = np.stack([np.histogram(c, bins=edges)[0] / len(c) for c in cols], axis=1)  # (bins, n_cols)
    vmax = float(dens.max()) or 1.0
    x0, y0, w, h = MARGIN, MARGIN, WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    cw, ch = w / dens.shape[1], h / bins
    out = _header()
    out.append(f'<g id="heatmap" data-columns="{dens.shape[1]}">')
    for j in range(dens.shape[1]):
        for i in range(bins):
            v = dens[i, j] / vmax
            if v == 0.0:
                continue
            out.append(f'<rect x="{_f(x0 + j * cw)}" y="{_f(y0 + h - (i + 1) * ch)}" width="{_f(cw)}" '
                       f'height="{_f(ch)}" fill="{_gray(v)}"/>')
    out.append("</g>")
    t = np.asarray(times, dtype=float)
    out += _axes(x0, y0, w, h, "t", f"x{coord + 1}", _range(t), (lo, hi))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def kde_panel_svg(panels: Sequence[dict], grid_size: int = 40) -> str:
    """Side-by-side density panels; each dict has ``title``, ``xs``, ``ys`` and ``values`` (ys x xs grid)."""
    if len(panels) == 0:
        raise PlotInputError("kde_panel needs at least one panel")
    n = len(panels)
    pw, ph = 220, 220
    W = n * (pw + 30) + 40
    H = ph + 90
    out = _header(W, H)
    for k, p in enumerate(panels):
        vals = np.asarray(p["values"], dtype=float)
        vmax = float(vals.max()) or 1.0
        x0 = 40 + k * (pw + 30)
        y0 = 40
        ny, nx = vals.shape
        cw, ch = pw / nx, ph / ny
        out.append(f'<g class="panel" id="panel{k}">')
        out.append(f'<text x="{_f(x0 + pw / 2)}" y="28" text-anchor="middle" {FONT}>{p["title"]}</text>')
        for i in range(ny):
            for j in range(nx):
                v = vals[i, j] / vmax
                if v < 1e-3:
                    continue
                out.append(f'<rect x="{_f(x0 + j * cw)}" y="{_f(y0 + ph - (i + 1) * ch)}" width="{_f(cw)}" '
                           f'height="{_f(ch)}" fill="{_gray(v)}"/>')
        out.append(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        xs, ys = p["xs"], p["ys"]
        out.append(f'<text x="{_f(x0)}" y="{_f(y0 + ph + 14)}" {FONT}>{xs[0]:.3g}</text>')
        out.append(f'<text x="{_f(x0 + pw)}" y="{_f(y0 + ph + 14)}" text-anchor="end" {FONT}>{xs[-1]:.3g}</text>')
        out.append(f'<text x="{_f(x0 - 4)}" y="{_f(y0 + ph)}" text-anchor="end" {FONT}>{ys[0]:.3g}</text>')
        out.append(f'<text x="{_f(x0 - 4)}" y="{_f(y0 + 10)}" text-anchor="end" {FONT}>{ys[-1]:.3g}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def kde_panels_from_ensembles(labels, ensembles, grid_size: int = 40, bandwidth="scott") -> list:
    """2-D KDE panels on the common bounding box of all ensembles."""
    from .eval import kde

    allpts = np.concatenate([np.asarray(e)[:, :2] for e in ensembles])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    xs = np.linspace(lo[0], hi[0], grid_size)
    ys = np.linspace(lo[1], hi[1], grid_size)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    panels = []
    for label, e in zip(labels, ensembles):
        vals = kde(np.asarray(e)[:, :2], bandwidth, grid).reshape(grid_size, grid_size)
        panels.append({"title": label, "xs": xs, "ys": ys, "values": vals})
    return panels


def write_svg(text: str, path) -> Path:
    p = Path(path)
    p.write_text(text)
    return p
