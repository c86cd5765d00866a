"""Report emitters: CSV tables, GeoJSON with computed properties, SVG maps.

Every emitter produces deterministic bytes: numbers are written at 15
significant digits, line endings are LF and row order is fixed by the
caller.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from deprivity.ingest import Dataset, DroppedRecord, RegionCollection
from deprivity.stattests import BreaksResult

# 5-step sequential ramp (light to dark)
DEFAULT_PALETTE = ("#fef0d9", "#fdcc8a", "#fc8d59", "#e34a33", "#b30000")
HOTSPOT_COLORS = {"Hot": "#d7301f", "Cold": "#2b8cbe", "Neither": "#f0f0f0"}

MISSING = "NA"


def format_number(v) -> str:
    if v is None:
        return MISSING
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return MISSING
    if f == 0:
        return "0"
    return format(f, ".15g")


def format_cell(v) -> str:
    if isinstance(v, str):
        return v
    return format_number(v)


def table_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue().encode("utf-8")


def emit_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a UTF-8 CSV table; an empty ``rows`` gives a header-only file."""
    path = Path(path)
    path.write_bytes(table_bytes(header, rows))
    return path


def emit_dropped(path, dropped: Sequence[DroppedRecord]) -> Path:
    return emit_table(path, ("id", "reason"), ((d.id, d.reason) for d in dropped))


# ---------------------------------------------------------------------------
# GeoJSON
# ---------------------------------------------------------------------------


def _geometry(region) -> dict:
    def ring(r):
        return [[x, y] for x, y in r]

    if region.is_multipart:
        return {
            "type": "MultiPolygon",
            "coordinates": [[ring(r) for r in poly] for poly in region.polygons],
        }
    return {"type": "Polygon", "coordinates": [ring(r) for r in region.polygons[0]]}


def serialize_geojson(
    rc: RegionCollection,
    id_property: str = "GEOID",
    extra_properties: Mapping[str, Mapping[str, object]] | None = None,
) -> bytes:
    """FeatureCollection of ``rc``; original properties first, extras appended."""
    features = []
    for region in rc:
        props = dict(region.properties)
        props[id_property] = props.get(id_property, region.id)
        if extra_properties and region.id in extra_properties:
            props.update(extra_properties[region.id])
        features.append({"type": "Feature", "properties": props, "geometry": _geometry(region)})
    doc = {"type": "FeatureCollection", "features": features}
    return (json.dumps(doc, ensure_ascii=False, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def emit_hotspot_geojson(path, ds: Dataset, bundle, gstar, id_property: str = "GEOID") -> Path:
    """Echo the dataset's features with index values and the G* result added."""
    extra = {}
    for k, rid in enumerate(ds.ids):
        extra[rid] = {
            "sd4": float(bundle.sd4[k]),
            "sd6": float(bundle.sd6[k]),
            "pca4": float(bundle.pca4[k]),
            "pca6": float(bundle.pca6[k]),
            "gstar_z": float(gstar.z[k]),
            "gstar_label": gstar.labels[k],
        }
    path = Path(path)
    path.write_bytes(serialize_geojson(ds.regions, id_property, extra))
    return path


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------


def _hex_to_rgb(c: str) -> tuple[int, int, int]:
    c = c.lstrip("#")
    return int(c[0:2], 16), int(c[2:4], 16), int(c[4:6], 16)


def palette_for(k: int, base: Sequence[str] = DEFAULT_PALETTE) -> tuple[str, ...]:
    """``k`` colors; the base ramp is linearly resampled when lengths differ."""
    if k == len(base):
        return tuple(base)
    if k == 1:
        return (base[len(base) // 2],)
    rgb = np.array([_hex_to_rgb(c) for c in base], dtype=float)
    pos = np.linspace(0, len(base) - 1, k)
    out = []
    for p in pos:
        lo = int(math.floor(p))
        hi = min(lo + 1, len(base) - 1)
        t = p - lo
        c = rgb[lo] * (1 - t) + rgb[hi] * t
        out.append("#%02x%02x%02x" % tuple(int(round(v)) for v in c))
    return tuple(out)


def _fmt(v: float) -> str:
    s = format(v, ".9f").rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Frame:
    """Maps lon/lat to SVG user space: y flipped, 2% margin on each side."""

    def __init__(self, rc: RegionCollection):
        bounds = [r.bounds() for r in rc]
        x0 = min(b[0] for b in bounds)
        y0 = min(b[1] for b in bounds)
        x1 = max(b[2] for b in bounds)
        y1 = max(b[3] for b in bounds)
        w = x1 - x0 or 1.0
        h = y1 - y0 or 1.0
        mx, my = 0.02 * w, 0.02 * h
        self.minx, self.maxy = x0 - mx, y1 + my
        self.width, self.height = w + 2 * mx, h + 2 * my

    def viewbox(self) -> str:
        return f"{_fmt(self.minx)} {_fmt(-self.maxy)} {_fmt(self.width)} {_fmt(self.height)}"

    def path_data(self, region) -> str:
        parts = []
        for ring in region.rings:
            pts = ring[:-1]
            cmds = [f"M{_fmt(pts[0][0])},{_fmt(-pts[0][1])}"]
            cmds += [f"L{_fmt(x)},{_fmt(-y)}" for x, y in pts[1:]]
            parts.append("".join(cmds) + "Z")
        return "".join(parts)


def _svg_document(rc, frame, fills, ids, legend, title) -> bytes:
    # legend lives in a band below the map, in the same user units
    band = frame.height * 0.06 * max(1, len(legend))
    total_h = frame.height + band
    sw = _fmt(frame.width / 1000)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(frame.minx)} {_fmt(-frame.maxy)} '
        f'{_fmt(frame.width)} {_fmt(total_h)}" width="800" height="{_fmt(800 * total_h / frame.width)}">',
        f"<title>{escape(title)}</title>",
        f'<g id="regions" stroke="#555555" stroke-width="{sw}" fill-rule="evenodd">',
    ]
    for region, fill, rid in zip(rc, fills, ids):
        lines.append(f'<path id={quoteattr("r-" + rid)} fill="{fill}" d="{frame.path_data(region)}"/>')
    lines.append("</g>")
    row_h = band / max(1, len(legend))
    font = _fmt(row_h * 0.6)
    lines.append(f'<g id="legend" font-family="sans-serif" font-size="{font}">')
    y = -frame.maxy + frame.height
    for color, label in legend:
        sq = row_h * 0.7
        lines.append(
            f'<rect x="{_fmt(frame.minx + frame.width * 0.02)}" y="{_fmt(y + row_h * 0.15)}" '
            f'width="{_fmt(sq)}" height="{_fmt(sq)}" fill="{color}" stroke="#555555" stroke-width="{sw}"/>'
        )
        lines.append(
            f'<text x="{_fmt(frame.minx + frame.width * 0.02 + sq * 1.5)}" y="{_fmt(y + row_h * 0.75)}">'
            f"{escape(label)}</text>"
        )
        y += row_h
    lines.append("</g>")
    lines.append("</svg>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def class_intervals(series, breaks: BreaksResult) -> list[tuple[float, float]]:
    """``(low, high)`` data range covered by each class."""
    x = np.asarray(series, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    edges = [lo, *breaks.breaks, hi]
    return [(edges[c], edges[c + 1]) for c in range(breaks.k)]


def choropleth_svg(rc: RegionCollection, series, breaks: BreaksResult,
                   palette: Sequence[str] | None = None, title: str = "") -> bytes:
    colors = tuple(palette) if palette is not None else palette_for(breaks.k)
    if len(colors) != breaks.k:
        raise ValueError(f"palette has {len(colors)} colors for {breaks.k} classes")
    frame = _Frame(rc)
    fills = [colors[c] for c in breaks.assignment]
    legend = []
    for c, (a, b) in enumerate(class_intervals(series, breaks)):
        legend.append((colors[c], f"{a:.2f} to {b:.2f}"))
    return _svg_document(rc, frame, fills, [r.id for r in rc], legend, title)


def emit_choropleth_svg(path, rc: RegionCollection, series, breaks: BreaksResult,
                        palette: Sequence[str] | None = None, title: str = "") -> Path:
    """One filled path per region, class colors from ``palette``, interval legend."""
    path = Path(path)
    path.write_bytes(choropleth_svg(rc, series, breaks, palette, title))
    return path


def emit_hotspot_svg(path, rc: RegionCollection, labels: Sequence[str], title: str = "") -> Path:
    frame = _Frame(rc)
    fills = [HOTSPOT_COLORS[lab] for lab in labels]
    legend = []
    for lab in ("Hot", "Cold", "Neither"):
        count = sum(1 for v in labels if v == lab)
        legend.append((HOTSPOT_COLORS[lab], f"{lab} (N={count})"))
    path = Path(path)
    path.write_bytes(_svg_document(rc, frame, fills, [r.id for r in rc], legend, title))
    return path
