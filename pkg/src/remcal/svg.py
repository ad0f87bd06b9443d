"""Self-contained SVG scatter of the latent space.

Output is a pure function of its inputs: coordinates and colours are written
with fixed formatting, so identical inputs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .dataset import fmt

# anchor colours of a perceptually ordered ramp (viridis endpoints and midpoints)
RAMP = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)
PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)
MAX_CLASSES = 12
WIDTH, HEIGHT, MARGIN, LEGEND = 640, 480, 40, 150


def ramp_colour(t: float) -> str:
    """Hex colour for ``t`` in [0, 1] by piecewise-linear interpolation of ``RAMP``."""
    t = min(max(float(t), 0.0), 1.0) * (len(RAMP) - 1)
    i = min(int(t), len(RAMP) - 2)
    rgb = RAMP[i] + (t - i) * (RAMP[i + 1] - RAMP[i])
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _classes(values: np.ndarray) -> np.ndarray | None:
    """Distinct levels when the variable is discrete enough to legend by class."""
    levels = np.unique(values)
    if len(levels) <= MAX_CLASSES and np.all(levels == np.round(levels)):
        return levels
    return None


def latent_svg(latent, values, title: str = "", label: str = "value") -> str:
    latent = np.asarray(latent, dtype=float)
    values = np.asarray(values, dtype=float)
    if latent.ndim != 2 or latent.shape[1] != 2:
        raise ValueError("latent must be n x 2")
    if values.shape != (len(latent),):
        raise ValueError("one colour value per point is required")

    lo, hi = latent.min(axis=0), latent.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    plot_w = WIDTH - 2 * MARGIN - LEGEND
    plot_h = HEIGHT - 2 * MARGIN
    px = MARGIN + (latent[:, 0] - lo[0]) / span[0] * plot_w
    py = HEIGHT - MARGIN - (latent[:, 1] - lo[1]) / span[1] * plot_h

    levels = _classes(values)
    if levels is not None:
        index = {v: i for i, v in enumerate(levels)}
        colours = [PALETTE[index[v] % len(PALETTE)] for v in values]
    else:
        vmin, vmax = float(values.min()), float(values.max())
        scale = vmax - vmin if vmax > vmin else 1.0
        colours = [ramp_colour((v - vmin) / scale) for v in values]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{MARGIN}" y="{MARGIN // 2}" font-size="14">{escape(title)}</text>',
        '<g class="points">',
    ]
    for x, y, c in zip(px, py, colours):
        out.append(f'<circle class="point" cx="{fmt(x)}" cy="{fmt(y)}" r="1.5" fill="{c}"/>')
    out.append("</g>")

    lx = WIDTH - LEGEND + 10
    out.append(f'<g class="legend"><text x="{lx}" y="{MARGIN}" font-size="12">{escape(label)}</text>')
    if levels is not None:
        for i, v in enumerate(levels):
            y = MARGIN + 20 + 18 * i
            out.append(
                f'<g class="legend-class"><rect x="{lx}" y="{y - 10}" width="12" height="12" '
                f'fill="{PALETTE[i % len(PALETTE)]}"/>'
                f'<text x="{lx + 18}" y="{y}" font-size="11">{escape(fmt(v))}</text></g>'
            )
    else:
        steps = 5
        for i in range(steps):
            t = i / (steps - 1)
            y = MARGIN + 20 + 18 * i
            out.append(
                f'<g class="legend-tick"><rect x="{lx}" y="{y - 10}" width="12" height="12" '
                f'fill="{ramp_colour(t)}"/>'
                f'<text x="{lx + 18}" y="{y}" font-size="11">{escape(fmt(vmin + t * (vmax - vmin)))}</text></g>'
            )
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_latent_plot(latent, values, path: str | Path, title: str = "", label: str = "value") -> Path:
    """Write the latent scatter coloured by ``values``; returns the path."""
    path = Path(path)
    path.write_text(latent_svg(latent, values, title, label), encoding="utf-8")
    return path
