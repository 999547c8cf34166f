"""Planar views of high-dimensional samples.

Points are projected onto the plane through ``a = e1``, ``b = e2``,
``c = e3``: origin at ``a``, x-axis along ``b - a``, y-axis the unit
direction of ``c - a`` orthogonal to it (so ``c`` has positive y).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import net as nn

GRID_RESOLUTION = 64
MARGIN = 0.10


@dataclass(frozen=True)
class ProjectionFrame:
    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def dim(self) -> int:
        return self.origin.shape[0]

    def lift(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return self.origin + xy[:, :1] * self.u + xy[:, 1:2] * self.v


def plane_basis(dim: int) -> ProjectionFrame:
    if dim < 3:
        raise ValueError(f"the a, b, c plane needs dim >= 3, got {dim}")
    a, b, c = np.eye(3, dim)
    u = (b - a) / np.linalg.norm(b - a)
    r = (c - a) - ((c - a) @ u) * u
    return ProjectionFrame(a, u, r / np.linalg.norm(r))


def project(points: np.ndarray, frame: ProjectionFrame) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if p.shape[1] != frame.dim:
        raise ValueError(f"points have dimension {p.shape[1]}, frame has {frame.dim}")
    d = p - frame.origin
    return np.column_stack([d @ frame.u, d @ frame.v])


def default_bounds(*projected: np.ndarray, margin: float = MARGIN) -> Tuple[float, float, float, float]:
    """Per-axis min/max of the projected points, widened by ``margin`` of the span."""
    pts = np.concatenate([np.atleast_2d(p) for p in projected])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * np.maximum(hi - lo, 1e-12)
    lo, hi = lo - pad, hi + pad
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def contour_grid(discriminators: Sequence[nn.Network], weights, frame: ProjectionFrame,
                 bounds: Optional[Tuple[float, float, float, float]] = None,
                 resolution: int = GRID_RESOLUTION):
    """Weighted critic output on a ``resolution x resolution`` grid of the plane.

    Returns ``(xs, ys, values)`` with ``values[r, c]`` at ``(xs[c], ys[r])``
    (row-major, y outer).
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if bounds is None:
        corners = project(np.eye(3, frame.dim), frame)
        bounds = default_bounds(corners)
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = frame.lift(np.column_stack([gx.ravel(), gy.ravel()]))
    vals = np.zeros(pts.shape[0])
    for w, d in zip(weights, discriminators):
        vals += w * nn.forward(d, pts)[:, 0]
    return xs, ys, vals.reshape(resolution, resolution)


def write_csv(path, real_xy: np.ndarray, fake_xy: np.ndarray, fake_index: Optional[np.ndarray] = None,
              grid=None) -> None:
    """Rows ``kind, generator_index, x, y, value``; generator index is 1-based, empty for reals."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["kind", "generator_index", "x", "y", "value"])
        for x, y in real_xy:
            out.writerow(["real", "", repr(float(x)), repr(float(y)), ""])
        for k, (x, y) in enumerate(fake_xy):
            gi = "" if fake_index is None else int(fake_index[k]) + 1
            out.writerow(["fake", gi, repr(float(x)), repr(float(y)), ""])
        if grid is not None:
            xs, ys, vals = grid
            for r, y in enumerate(ys):
                for c, x in enumerate(xs):
                    out.writerow(["grid", "", repr(float(x)), repr(float(y)), repr(float(vals[r, c]))])


def _diverging(t: float) -> str:
    """Blue (low) through white to red (high) for ``t`` in [0, 1]."""
    t = min(1.0, max(0.0, t))
    if t < 0.5:
        s = t / 0.5
        rgb = (int(40 + 215 * s), int(90 + 165 * s), 255)
    else:
        s = (t - 0.5) / 0.5
        rgb = (255, int(255 - 165 * s), int(255 - 215 * s))
    return "#%02x%02x%02x" % rgb


def render_svg(path, real_xy: np.ndarray, fake_xy: np.ndarray, grid=None, size: int = 480,
               title: str = "") -> None:
    if grid is not None:
        xs, ys, vals = grid
        bounds = (xs[0], xs[-1], ys[0], ys[-1])
    else:
        bounds = default_bounds(real_xy, fake_xy)
    x0, x1, y0, y1 = bounds

    def px(x, y):
        return (x - x0) / (x1 - x0) * size, size - (y - y0) / (y1 - y0) * size

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">']
    if grid is not None:
        lo, hi = float(vals.min()), float(vals.max())
        span = hi - lo if hi > lo else 1.0
        cw = size / (len(xs) - 1)
        ch = size / (len(ys) - 1)
        for r, y in enumerate(ys):
            for c, x in enumerate(xs):
                cx, cy = px(x, y)
                parts.append(f'<rect x="{cx - cw / 2:.2f}" y="{cy - ch / 2:.2f}" width="{cw + 0.5:.2f}" '
                             f'height="{ch + 0.5:.2f}" fill="{_diverging((vals[r, c] - lo) / span)}"/>')
    for pts, color in ((real_xy, "#d62728"), (fake_xy, "#1f3fb4")):
        for x, y in pts:
            cx, cy = px(x, y)
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5" fill="{color}"/>')
    if title:
        parts.append(f'<text x="6" y="16" font-family="sans-serif" font-size="12">{title}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
