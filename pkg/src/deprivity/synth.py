"""Synthetic study city with a planted deprivation gradient.

``synthtown`` is a 20 x 10 grid of jittered quadrilateral block groups.  A
latent deprivation surface peaks east of centre; every component and socio
variable is a noisy linear function of it, so the indices co-move and the
hot-spot analysis has something to find.  A few cells are left missing and
one attribute row has no geometry, to exercise the missing-data policy.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

COLS, ROWS = 20, 10
LON0, LAT0, STEP = -81.70, 41.45, 0.01
JITTER = 0.0025
SEED = 20140101

ATTRIBUTE_COLUMNS = (
    "percpov", "unemp", "percnohs", "percsnap", "percvac", "medinc",
    "perc40min", "percpubtra", "percrent", "percnonwhi",
)

# (intercept, latent slope, noise sd) for percentage columns
_LINEAR = {
    "percpov": (22.0, 16.0, 5.0),
    "unemp": (6.0, 5.0, 2.0),
    "percnohs": (14.0, 9.0, 4.0),
    "percsnap": (25.0, 18.0, 6.0),
    "percvac": (10.0, 8.0, 5.0),
    "perc40min": (10.0, 2.0, 5.0),
    "percpubtra": (6.0, 6.0, 4.0),
    "percrent": (45.0, 10.0, 12.0),
    "percnonwhi": (30.0, 25.0, 15.0),
}

# (row, col, column, token) cells blanked in the CSV
_MISSING_CELLS = ((2, 3, "percvac", "NA"), (7, 12, "unemp", "null"), (4, 17, "medinc", ""))
ORPHAN_ID = "390359999999"


def region_id(r: int, c: int) -> str:
    return f"39035{100 + r * 10 + c // 10:06d}{c % 10}"


def _vertices(rng) -> np.ndarray:
    v = np.empty((ROWS + 1, COLS + 1, 2))
    for r in range(ROWS + 1):
        for c in range(COLS + 1):
            jx = jy = 0.0
            if 0 < r < ROWS and 0 < c < COLS:
                jx, jy = rng.uniform(-JITTER, JITTER, size=2)
            v[r, c] = (round(LON0 + c * STEP + jx, 6), round(LAT0 + r * STEP + jy, 6))
    return v


def build(seed: int = SEED):
    """Return ``(geojson_bytes, csv_bytes)``."""
    rng = np.random.default_rng(seed)
    v = _vertices(rng)
    features = []
    for r in range(ROWS):
        for c in range(COLS):
            ring = [v[r, c], v[r, c + 1], v[r + 1, c + 1], v[r + 1, c], v[r, c]]
            features.append({
                "type": "Feature",
                "properties": {"GEOID": region_id(r, c), "NAME": f"Block Group {c % 10}, Tract {r}"},
                "geometry": {"type": "Polygon", "coordinates": [[[float(x), float(y)] for x, y in ring]]},
            })
    geo = json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n"

    rows = []
    for r in range(ROWS):
        for c in range(COLS):
            dist2 = (c - 14.5) ** 2 + ((r - 4.5) * 1.2) ** 2
            latent = 2.5 * math.exp(-dist2 / 40.0) + 0.3 * rng.standard_normal()
            rec = {"GEOID": region_id(r, c)}
            for name in ("percpov", "unemp", "percnohs", "percsnap", "percvac"):
                a, b, s = _LINEAR[name]
                rec[name] = f"{min(100.0, max(0.0, a + b * latent + s * rng.standard_normal())):.2f}"
            rec["medinc"] = str(int(round(52000 * math.exp(-0.35 * latent + 0.15 * rng.standard_normal()))))
            for name in ("perc40min", "percpubtra", "percrent", "percnonwhi"):
                a, b, s = _LINEAR[name]
                rec[name] = f"{min(100.0, max(0.0, a + b * latent + s * rng.standard_normal())):.2f}"
            rows.append(rec)
    for r, c, name, token in _MISSING_CELLS:
        rows[r * COLS + c][name] = token
    orphan = dict(rows[0])
    orphan["GEOID"] = ORPHAN_ID
    rows.append(orphan)

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=("GEOID",) + ATTRIBUTE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return geo.encode("utf-8"), buf.getvalue().encode("utf-8")


CONFIG = """\
# Synthetic study city shipped with the package.
output_dir = reports
seed = 42
permutations = 999
breaks.k = 5
gstar.threshold = 1.96
weights.scheme = queen
socio.variables = perc40min, percpubtra, percrent, medinc, percnonwhi
socio.log = medinc as lnmedy

city.synthtown.geometry = synthtown.geojson
city.synthtown.attributes = synthtown.csv
city.synthtown.id_property = GEOID
"""


def write(directory, seed: int = SEED) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    geo, table = build(seed)
    (directory / "synthtown.geojson").write_bytes(geo)
    (directory / "synthtown.csv").write_bytes(table)
    (directory / "synthtown.conf").write_text(CONFIG, encoding="utf-8")


def bundled_dir() -> Path:
    return Path(__file__).parent / "data" / "synthtown"


if __name__ == "__main__":
    write(bundled_dir())
