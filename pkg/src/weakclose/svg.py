"""Minimal deterministic SVG emitters (line plots, heatmaps, set diagrams)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
MARGIN = 50
PALETTE = ["#1f4e9c", "#c0392b", "#27864a", "#8e44ad", "#d35400", "#555555"]


def _f(x: float) -> str:
    return f"{x:.2f}"


@dataclass
class Frame:
    xlim: tuple
    ylim: tuple
    log_y: bool = False
    parts: list = field(default_factory=list)

    def X(self, x):
        a, b = self.xlim
        return MARGIN + (x - a) / (b - a) * (W - 2 * MARGIN)

    def Y(self, y):
        a, b = self.ylim
        if self.log_y:
            y, a, b = math.log10(max(y, 1e-300)), math.log10(a), math.log10(b)
        return H - MARGIN - (y - a) / (b - a) * (H - 2 * MARGIN)

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_f(self.X(x))},{_f(self.Y(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{d} points="{pts}"/>')

    def rect(self, x0, y0, x1, y1, color, opacity=0.2):
        xa, xb = sorted((self.X(x0), self.X(x1)))
        ya, yb = sorted((self.Y(y0), self.Y(y1)))
        self.parts.append(
            f'<rect x="{_f(xa)}" y="{_f(ya)}" width="{_f(xb - xa)}" height="{_f(yb - ya)}" '
            f'fill="{color}" fill-opacity="{opacity}"/>'
        )

    def point(self, x, y, label, color="#000000"):
        cx, cy = self.X(x), self.Y(y)
        self.parts.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="3" fill="{color}"/>')
        self.parts.append(f'<text x="{_f(cx + 5)}" y="{_f(cy - 5)}" font-size="13">{escape(label)}</text>')

    def text(self, x, y, s, size=12, anchor="start"):
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}">{escape(s)}</text>')

    def axes(self, title, xlabel, ylabel):
        a, b = self.xlim
        c, d = self.ylim
        self.parts.insert(0, f'<rect x="{MARGIN}" y="{MARGIN}" width="{W - 2 * MARGIN}" height="{H - 2 * MARGIN}" fill="none" stroke="#000"/>')
        self.text(W / 2, MARGIN - 15, title, 14, "middle")
        self.text(W / 2, H - 12, xlabel, 12, "middle")
        self.text(14, H / 2, ylabel, 12, "middle")
        for v, s in ((a, "start"), (b, "end")):
            self.text(self.X(v), H - MARGIN + 15, f"{v:.3g}", 10, s)
        for v in (c, d):
            self.text(MARGIN - 4, self.Y(v) + 4, f"{v:.3g}", 10, "end")
        if a < 0 < b:
            self.polyline([0, 0], [c, d], "#999999", 0.5)
        if c < 0 < d and not self.log_y:
            self.polyline([a, b], [0, 0], "#999999", 0.5)

    def render(self, extra_defs: str = "") -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
            f'{extra_defs}<rect width="{W}" height="{H}" fill="#ffffff"/>\n{body}\n</svg>\n'
        )


def _lims(vals, pad=0.05):
    v = np.asarray([x for x in np.ravel(vals) if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return (0.0, 1.0)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo
    return (lo - pad * span, hi + pad * span)


def line_plot(series, title="", xlabel="", ylabel="", shade_x=(), points=(), log_y=False) -> str:
    """``series``: list of ``(xs, ys, label)``; ``shade_x``: x-intervals to shade."""
    xs_all = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    if log_y:
        pos = ys_all[ys_all > 0]
        ylim = (float(pos.min()) / 2, float(pos.max()) * 2) if pos.size else (1e-3, 1.0)
    else:
        ylim = _lims(ys_all)
    fr = Frame(_lims(xs_all, 0.0), ylim, log_y)
    for a, b in shade_x:
        fr.rect(max(a, fr.xlim[0]), fr.ylim[0], min(b, fr.xlim[1]), fr.ylim[1], "#27864a")
    for k, (xs, ys, label) in enumerate(series):
        col = PALETTE[k % len(PALETTE)]
        fr.polyline(xs, ys, col)
        fr.text(W - MARGIN - 5, MARGIN + 15 + 15 * k, label, 11, "end")
        fr.parts.append(f'<rect x="{W - MARGIN - 5 + 2}" y="{MARGIN + 7 + 15 * k}" width="8" height="8" fill="{col}"/>')
    for x, y, label in points:
        fr.point(x, y, label)
    fr.axes(title, xlabel, ylabel)
    return fr.render()


def _color(t: float) -> str:
    # white -> blue ramp
    t = min(max(t, 0.0), 1.0)
    r = int(round(255 * (1 - 0.85 * t)))
    g = int(round(255 * (1 - 0.65 * t)))
    b = int(round(255 * (1 - 0.25 * t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(values, x_axis, y_axis, title="", xlabel="", ylabel="", curves=(), max_cells=96, log=True) -> str:
    """Heatmap of ``values[i, j]`` over ``(x_axis[i], y_axis[j])``.

    Downsamples to at most ``max_cells`` per side; ``curves`` is a list of
    ``(xs, ys)`` overlays.
    """
    V = np.asarray(values, dtype=float)
    si = max(1, int(math.ceil(V.shape[0] / max_cells)))
    sj = max(1, int(math.ceil(V.shape[1] / max_cells)))
    V = V[::si, ::sj]
    xa = np.asarray(x_axis, dtype=float)[::si]
    ya = np.asarray(y_axis, dtype=float)[::sj]
    fr = Frame((float(x_axis[0]), float(x_axis[-1])), (float(y_axis[0]), float(y_axis[-1])))
    Z = np.log1p(np.maximum(V, 0.0)) if log else V
    zmax = float(np.max(Z)) if Z.size and np.max(Z) > 0 else 1.0
    dx = (xa[1] - xa[0]) if len(xa) > 1 else 1.0
    dy = (ya[1] - ya[0]) if len(ya) > 1 else 1.0
    for i, x in enumerate(xa):
        for j, y in enumerate(ya):
            fr.parts.append(
                f'<rect x="{_f(fr.X(x - dx / 2))}" y="{_f(fr.Y(y + dy / 2))}" '
                f'width="{_f(fr.X(x + dx / 2) - fr.X(x - dx / 2))}" height="{_f(fr.Y(y - dy / 2) - fr.Y(y + dy / 2))}" '
                f'fill="{_color(Z[i, j] / zmax)}"/>'
            )
    for k, (xs, ys) in enumerate(curves):
        fr.polyline(xs, ys, PALETTE[1 + k % (len(PALETTE) - 1)], 1.8)
    fr.axes(title, xlabel, ylabel)
    return fr.render()


def set_diagram(p_graph, sigma_graph, bands, labels, title="", beta_lim=None) -> str:
    """Graph of ``sigma`` plus vertical ``Sigma(q)`` segments and labelled corners.

    ``bands``: list of ``(q, lo, hi)``; ``labels``: list of ``(x, y, name)``.
    """
    ys = list(np.ravel(sigma_graph)) + [b for _, lo, hi in bands for b in (lo, hi)]
    fr = Frame(_lims(p_graph, 0.0), beta_lim or _lims(ys))
    for q, lo, hi in bands:
        lo_c = max(lo, fr.ylim[0])
        hi_c = min(hi, fr.ylim[1])
        if hi_c >= lo_c:
            fr.polyline([q, q], [lo_c, hi_c], "#c0392b", 1.2)
    fr.polyline(p_graph, np.clip(sigma_graph, *fr.ylim), "#1f4e9c", 2.0)
    for x, y, name in labels:
        fr.point(x, y, name)
    fr.axes(title, "p", "beta")
    return fr.render()
