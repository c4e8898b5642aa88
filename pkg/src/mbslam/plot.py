"""Top-down (x, z) SVG of estimated and ground-truth trajectories."""

from __future__ import annotations

from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .se3 import Pose

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _xz(traj: Mapping[int, Pose]) -> np.ndarray:
    return np.array([[traj[f].t[0], traj[f].t[2]] for f in sorted(traj)]).reshape(-1, 2)


def trajectories_svg(
    estimates: Mapping[str, Mapping[int, Pose]],
    truth: Mapping[str, Mapping[int, Pose]] | None = None,
    size: int = 640,
    margin: int = 40,
) -> str:
    """Ground truth dashed, estimate solid, one colour per body; z points up the page."""
    truth = truth or {}
    series = [(b, _xz(t)) for b, t in estimates.items()] + [(b, _xz(t)) for b, t in truth.items()]
    pts = np.vstack([p for _, p in series if len(p)] or [np.zeros((1, 2))])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1.0))
    scale = (size - 2 * margin) / span

    def to_px(p):
        x = margin + (p[:, 0] - lo[0]) * scale
        y = size - margin - (p[:, 1] - lo[1]) * scale
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    bodies = list(estimates) + [b for b in truth if b not in estimates]
    for i, body in enumerate(bodies):
        colour = PALETTE[i % len(PALETTE)]
        if body in truth and len(truth[body]) > 1:
            out.append(f'<polyline points="{to_px(_xz(truth[body]))}" fill="none" stroke="{colour}" '
                       f'stroke-width="1.5" stroke-dasharray="6 4"/>')
        if body in estimates and len(estimates[body]) > 1:
            out.append(f'<polyline points="{to_px(_xz(estimates[body]))}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{margin}" y="{16 + 14 * i}" font-size="12" fill="{colour}">{escape(body)}</text>')
    out.append(f'<text x="{size - margin}" y="{size - 8}" font-size="11" text-anchor="end">'
               f"x right, z forward; {span:.0f} m across</text>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
