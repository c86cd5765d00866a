import json
import sys

import numpy as np
import pytest

from deprivity.ingest import parse_geojson


def square(x0, y0, size=1.0):
    return [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]]


def feature_collection(rings_by_id, id_property="GEOID", extra=None):
    feats = []
    for rid, ring in rings_by_id.items():
        props = {id_property: rid}
        if extra and rid in extra:
            props.update(extra[rid])
        feats.append({
            "type": "Feature",
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return json.dumps({"type": "FeatureCollection", "features": feats}).encode()


def grid_collection(nx, ny, size=1.0, origin=(0.0, 0.0)):
    """``nx`` by ``ny`` unit squares, ids ``r{row}c{col}`` in row-major order."""
    rings = {}
    for r in range(ny):
        for c in range(nx):
            rings[f"r{r}c{c}"] = square(origin[0] + c * size, origin[1] + r * size, size)
    return parse_geojson(feature_collection(rings))


def jittered_grid(nx, ny, rng, jitter=0.3):
    """Tessellation of quads sharing jittered interior vertices."""
    v = np.zeros((ny + 1, nx + 1, 2))
    for r in range(ny + 1):
        for c in range(nx + 1):
            jx = jy = 0.0
            if 0 < r < ny and 0 < c < nx:
                jx, jy = rng.uniform(-jitter, jitter, size=2)
            v[r, c] = (c + jx, r + jy)
    rings = {}
    for r in range(ny):
        for c in range(nx):
            pts = [v[r, c], v[r, c + 1], v[r + 1, c + 1], v[r + 1, c], v[r, c]]
            rings[f"r{r}c{c}"] = [[float(x), float(y)] for x, y in pts]
    return parse_geojson(feature_collection(rings))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
