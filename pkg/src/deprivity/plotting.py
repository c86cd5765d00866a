"""Matplotlib figures for the report directory (PNG).

Index choropleths and Moran scatterplots, as raster companions to the SVG
maps.  Figures are built on bare ``Figure`` objects, not pyplot, so cities
rendered from worker threads never share global state.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.collections import PolyCollection
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from deprivity.contiguity import WeightsMatrix
from deprivity.report import class_intervals, palette_for
from deprivity.stattests import mean

# PNG metadata otherwise embeds the library version
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _style(ax, title):
    ax.set_title(title, fontsize=11)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    for side in ("top", "right", "bottom", "left"):
        ax.spines[side].set_visible(False)


def plot_choropleth(path, rc, series, breaks, title=""):
    colors = palette_for(breaks.k)
    polys, faces = [], []
    for region, c in zip(rc, breaks.assignment):
        for polygon in region.polygons:
            polys.append(np.asarray(polygon[0]))
            faces.append(colors[c])
    fig = Figure(figsize=(7.5, 5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    ax.add_collection(PolyCollection(polys, facecolors=faces, edgecolors="#555555", linewidths=0.3))
    ax.autoscale_view()
    _style(ax, title)
    handles = [
        Rectangle((0, 0), 1, 1, facecolor=colors[c], edgecolor="#555555")
        for c in range(breaks.k)
    ]
    labels = [f"{a:.2f} to {b:.2f}" for a, b in class_intervals(series, breaks)]
    ax.legend(handles, labels, loc="center left", bbox_to_anchor=(1.02, 0.5), fontsize=8, frameon=False)
    fig.savefig(path, bbox_inches="tight", **_SAVE_KW)
    return Path(path)


def plot_moran_scatter(path, x, w: WeightsMatrix, title=""):
    """Standardized values against their row-averaged spatial lag."""
    x = np.asarray(x, dtype=float)
    z = (x - mean(x)) / x.std()
    rows, cols, vals = w.csr
    lag = np.zeros_like(z)
    np.add.at(lag, rows, vals * z[cols])
    rowsum = np.zeros_like(z)
    np.add.at(rowsum, rows, vals)
    lag = np.divide(lag, rowsum, out=np.zeros_like(lag), where=rowsum > 0)
    slope = float(np.dot(z, lag) / np.dot(z, z))

    fig = Figure(figsize=(5, 5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    ax.scatter(z, lag, s=8, color="#444444", alpha=0.7, linewidths=0)
    lim = np.array([z.min(), z.max()])
    ax.plot(lim, slope * lim, color="#b30000", lw=1.2)
    ax.axhline(0, color="#999999", lw=0.6)
    ax.axvline(0, color="#999999", lw=0.6)
    ax.set_xlabel("standardized value")
    ax.set_ylabel("spatial lag")
    ax.set_title(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    return Path(path)
