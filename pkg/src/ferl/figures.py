"""SVG heatmaps of mean field values over 2D projections of EE positions."""
from __future__ import annotations

import os

import numpy as np

# viridis anchors
_ANCHORS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def _color(u):
    u = float(np.clip(u, 0.0, 1.0)) * (len(_ANCHORS) - 1)
    i = min(int(u), len(_ANCHORS) - 2)
    c = _ANCHORS[i] + (u - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def binned_means(a, b, values, bins):
    """Mean of ``values`` per cell of a bins x bins grid over (a, b); NaN where empty."""
    rng = [[a.min(), a.max() + 1e-12], [b.min(), b.max() + 1e-12]]
    total, ea, eb = np.histogram2d(a, b, bins, range=rng, weights=values)
    count, _, _ = np.histogram2d(a, b, bins, range=rng)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / count, np.nan), ea, eb


def heatmap_svg(a, b, values, bins=24, title="", labels=("x", "y"), cell=12):
    means, _, _ = binned_means(np.asarray(a), np.asarray(b), np.asarray(values, dtype=float), bins)
    finite = means[np.isfinite(means)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    pad, top = 30, 24
    w = h = bins * cell
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad}" height="{h + top + pad}">',
        f'<text x="{pad}" y="16" font-family="sans-serif" font-size="12">{title}</text>',
    ]
    for i in range(bins):
        for j in range(bins):
            v = means[i, j]
            if not np.isfinite(v):
                continue
            x = pad + i * cell
            y = top + (bins - 1 - j) * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_color((v - lo) / span)}"/>')
    out.append(f'<text x="{pad + w / 2}" y="{top + h + 20}" font-family="sans-serif" font-size="11">{labels[0]}</text>')
    out.append(f'<text x="8" y="{top + h / 2}" font-family="sans-serif" font-size="11">{labels[1]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def field_heatmaps(prefix, ee_positions, values, bins=24, title=""):
    """Write ``<prefix>_xy.svg`` and ``<prefix>_yz.svg``; returns the paths."""
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    p = np.asarray(ee_positions)
    paths = []
    for name, (i, j), labels in (("xy", (0, 1), ("x", "y")), ("yz", (1, 2), ("y", "z"))):
        path = f"{prefix}_{name}.svg"
        with open(path, "w") as fh:
            fh.write(heatmap_svg(p[:, i], p[:, j], values, bins, f"{title} ({name})", labels))
        paths.append(path)
    return paths
