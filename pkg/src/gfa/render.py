"""Deterministic SVG rendering of clusters and flow lines.

All coordinates are written with a fixed number of decimals and colors come
from fixed tables, so identical inputs give byte-identical SVG text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Cluster

COLOR_MODES = ("parent", "order", "attach-angle")

# Sampled from the viridis colormap at 9 evenly spaced stops.
_RAMP = np.array([
    (0x44, 0x01, 0x54), (0x47, 0x2c, 0x7a), (0x3b, 0x51, 0x8b), (0x2c, 0x71, 0x8e), (0x21, 0x90, 0x8d),
    (0x27, 0xad, 0x81), (0x5c, 0xc8, 0x63), (0xaa, 0xdc, 0x32), (0xfd, 0xe7, 0x25)], dtype=np.float64)

_CATEGORICAL = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
                "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class SvgStyle:
    precision: int = 4
    margin: float = 1.0
    pixels_per_unit: float = 4.0
    stroke: str = "#222222"
    stroke_width: float = 0.02
    line_color: str = "#d62728"
    line_width: float = 0.08
    background: str = "#ffffff"
    max_pixels: float = 4000.0
    flow_margin: float = 0.25  # extra frame around the cluster when flow lines are drawn


def _hex(rgb) -> str:
    r, g, b = (int(round(min(max(c, 0.0), 255.0))) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def ramp(t: float) -> str:
    """Map t in [0, 1] onto the fixed sequential ramp."""
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    f = t - i
    return _hex(_RAMP[i] * (1.0 - f) + _RAMP[i + 1] * f)


def hue(angle: float) -> str:
    """Fully saturated color for an angle in radians (HSV with s = v = 0.85)."""
    h = (angle / (2.0 * math.pi)) % 1.0 * 6.0
    i = int(h) % 6
    f = h - int(h)
    v, s = 0.85 * 255.0, 0.85
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return _hex([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def particle_colors(cluster: Cluster, color_by: str = "order") -> list[str]:
    if color_by not in COLOR_MODES:
        raise ValueError(f"color_by must be one of {COLOR_MODES}")
    n = cluster.n
    if n == 0:
        return []
    if color_by == "order":
        order = cluster.order.astype(np.float64)
        span = max(order.max() - order.min(), 1.0)
        return [ramp((o - order.min()) / span) for o in order]
    par = cluster.parent
    if color_by == "parent":
        return [_CATEGORICAL[int(p) % len(_CATEGORICAL)] if p >= 0 else "#000000" for p in par]
    pos = cluster.positions
    out = []
    for i in range(n):
        p = int(par[i])
        if p < 0:
            out.append("#000000")
        else:
            dx = pos[i, :2] - pos[p, :2]
            out.append(hue(math.atan2(dx[1], dx[0])))
    return out


def _fmt(v: float, prec: int) -> str:
    s = f"{v:.{prec}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def _clip(path: np.ndarray, lo, hi) -> np.ndarray:
    """Drop the leading vertices outside the frame, keeping the last one
    before the path enters so the line reaches the edge."""
    inside = np.all((path >= lo) & (path <= hi), axis=1)
    first = int(np.argmax(inside)) if inside.any() else path.shape[0] - 1
    return path[max(first - 1, 0):]


def render_svg(cluster: Cluster, color_by: str = "order", flow_lines=None,
               style: SvgStyle | None = None) -> str:
    """Standalone SVG of a planar projection of ``cluster``.

    Particles are circles of radius 1/2 in user units; ``flow_lines`` is an
    optional list of (m, >=2) arrays drawn as polylines, framed around the
    cluster (the far parts are cut off). The y axis points up.
    """
    st = style or SvgStyle()
    pos = cluster.positions[:, :2] if cluster.n else np.zeros((0, 2))
    base = pos if pos.size else np.zeros((1, 2))
    lo = base.min(axis=0) - 0.5 - st.margin
    hi = base.max(axis=0) + 0.5 + st.margin
    if flow_lines:
        pad = st.flow_margin * float(np.max(hi - lo))
        lo, hi = lo - pad, hi + pad
    flow_lines = [_clip(np.asarray(t, dtype=np.float64)[:, :2], lo, hi)
                  for t in (flow_lines or []) if len(t) > 1]
    w, h = hi - lo
    scale = min(st.pixels_per_unit, st.max_pixels / max(w, h))
    f = lambda v: _fmt(v, st.precision)  # noqa: E731
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{f(w * scale)}" '
        f'height="{f(h * scale)}" viewBox="{f(lo[0])} {f(-hi[1])} {f(w)} {f(h)}">',
        f'<rect x="{f(lo[0])}" y="{f(-hi[1])}" width="{f(w)}" height="{f(h)}" fill="{st.background}"/>',
        f'<g id="particles" stroke="{st.stroke}" stroke-width="{f(st.stroke_width)}">',
    ]
    for (x, y), c in zip(pos, particle_colors(cluster, color_by)):
        lines.append(f'<circle cx="{f(x)}" cy="{f(-y)}" r="0.5" fill="{c}"/>')
    lines.append("</g>")
    if flow_lines:
        lines.append(f'<g id="flow-lines" fill="none" stroke="{st.line_color}" '
                     f'stroke-width="{f(st.line_width)}" stroke-linejoin="round">')
        for t in flow_lines:
            coords = " ".join(f"{f(x)},{f(-y)}" for x, y in t)
            lines.append(f'<polyline points="{coords}"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def flow_line_paths(cluster: Cluster, kind, count: int, config=None, max_points: int = 2000) -> list[np.ndarray]:
    """Trajectories for ``count`` equispaced arrival angles, each ending at the
    attachment point. Long paths are thinned to ``max_points`` vertices while
    keeping both endpoints."""
    from .flow import Attached, FlowConfig, launch, start_point

    if cluster.dim != 2:
        raise ValueError("flow lines are rendered for planar clusters only")
    config = config or FlowConfig()
    paths = []
    for j in range(count):
        theta = 2.0 * math.pi * j / count
        if kind.variant == "max":
            out = launch(cluster, kind, theta, config)
            path = np.stack([start_point(cluster, theta, config), out.position])
        else:
            out = launch(cluster, kind, theta, config, record=True)
            path = out.trajectory[:, :2]
            if path.shape[0] == 0 or not np.array_equal(path[-1], out.position):
                path = np.vstack([path, out.position[None, :]])
        if path.shape[0] > max_points:
            keep = np.unique(np.round(np.linspace(0, path.shape[0] - 1, max_points)).astype(np.int64))
            path = path[keep]
        if not isinstance(out, Attached):
            continue
        paths.append(path)
    return paths


def write_svg(text: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
