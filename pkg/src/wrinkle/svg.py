"""Minimal deterministic SVG line plots (one or more panels side by side)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape

import numpy as np

W, H, PAD = 420, 300, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)  # (xs, ys, label)
    logx: bool = False
    logy: bool = False

    def add(self, xs, ys, label: str = "") -> "Panel":
        self.series.append((np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), label))
        return self


def _transform(v: np.ndarray, log: bool) -> np.ndarray:
    if not log:
        return v
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, np.log10(v), np.nan)


def _range(vals: list[np.ndarray]) -> tuple[float, float]:
    finite = np.concatenate([v[np.isfinite(v)] for v in vals]) if vals else np.array([])
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _tick(v: float, log: bool) -> str:
    return f"{10.0 ** v:.3g}" if log else f"{v:.3g}"


def _panel(p: Panel, ox: float) -> list[str]:
    xs = [_transform(s[0], p.logx) for s in p.series]
    ys = [_transform(s[1], p.logy) for s in p.series]
    x0, x1 = _range(xs)
    y0, y1 = _range(ys)

    def X(v):
        return ox + PAD + (v - x0) / (x1 - x0) * (W - 1.5 * PAD)

    def Y(v):
        return H - PAD - (v - y0) / (y1 - y0) * (H - 1.5 * PAD)

    out = [
        f'<rect x="{ox + PAD:.1f}" y="{PAD / 2:.1f}" width="{W - 1.5 * PAD:.1f}" height="{H - 1.5 * PAD:.1f}" fill="none" stroke="#444"/>',
        f'<text x="{ox + W / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(p.title)}</text>',
        f'<text x="{ox + W / 2:.1f}" y="{H - 8}" text-anchor="middle" font-size="11">{escape(p.xlabel)}</text>',
        f'<text x="{ox + 12:.1f}" y="{H / 2:.1f}" text-anchor="middle" font-size="11" transform="rotate(-90 {ox + 12:.1f} {H / 2:.1f})">{escape(p.ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{X(xv):.1f}" y="{H - PAD + 14:.1f}" text-anchor="middle" font-size="9">{_tick(xv, p.logx)}</text>')
        out.append(f'<text x="{ox + PAD - 4:.1f}" y="{Y(yv) + 3:.1f}" text-anchor="end" font-size="9">{_tick(yv, p.logy)}</text>')
    for i, ((_, _, label), xv, yv) in enumerate(zip(p.series, xs, ys)):
        ok = np.isfinite(xv) & np.isfinite(yv)
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(xv[ok], yv[ok]))
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if label:
            out.append(f'<text x="{ox + W - PAD:.1f}" y="{PAD / 2 + 14 * (i + 1):.1f}" text-anchor="end" font-size="10" fill="{color}">{escape(label)}</text>')
    return out


def render(panels: list[Panel]) -> str:
    width = W * len(panels)
    body = []
    for i, p in enumerate(panels):
        body += _panel(p, i * W)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" viewBox="0 0 {width} {H}">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def log_axis_ok(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.isfinite(v)) and np.all(v > 0) and not math.isclose(v.min(), v.max()))
