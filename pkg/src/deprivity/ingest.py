"""Geometry and attribute ingestion.

Polygons arrive as an RFC 7946 FeatureCollection, attributes as a headered
CSV or from a census-style HTTP API.  Both are joined on the region id and
then filtered with listwise deletion before any index is computed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from deprivity.errors import (
    CSVError,
    FetchError,
    GeoJSONError,
    JoinError,
    MissingDataError,
    RetryableFetchError,
)

log = logging.getLogger(__name__)

Point = tuple[float, float]
Ring = tuple[Point, ...]
Polygon = tuple[Ring, ...]

MISSING_TOKENS = frozenset({"", "na", "null"})


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _check_ring(ring: Ring, where: str) -> None:
    if len(ring) < 4:
        raise GeoJSONError(f"{where}: ring has {len(ring)} points, need at least 4")
    if ring[0] != ring[-1]:
        raise GeoJSONError(f"{where}: ring not closed")


@dataclass(frozen=True)
class Region:
    """One block group.

    ``polygons`` holds one ring group per polygon part (exterior ring first,
    then holes).  Plain Polygon features have exactly one part.
    """

    id: str
    polygons: tuple[Polygon, ...]
    properties: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.id:
            raise GeoJSONError("region id must be non-empty")
        for p, polygon in enumerate(self.polygons):
            if not polygon:
                raise GeoJSONError(f"region {self.id!r}: polygon part {p} has no rings")
            for r, ring in enumerate(polygon):
                _check_ring(ring, f"region {self.id!r} part {p} ring {r}")

    @property
    def rings(self) -> tuple[Ring, ...]:
        """All rings, part by part; each part's exterior precedes its holes."""
        return tuple(ring for polygon in self.polygons for ring in polygon)

    @property
    def is_multipart(self) -> bool:
        return len(self.polygons) > 1

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [x for ring in self.rings for x, _ in ring]
        ys = [y for ring in self.rings for _, y in ring]
        return min(xs), min(ys), max(xs), max(ys)


class RegionCollection:
    """Ordered, id-indexed, immutable collection of regions."""

    def __init__(self, regions: Iterable[Region]):
        self._regions = tuple(regions)
        index = {}
        for pos, region in enumerate(self._regions):
            if region.id in index:
                raise GeoJSONError(f"duplicate region id {region.id!r}")
            index[region.id] = pos
        self._index = MappingProxyType(index)

    @property
    def regions(self) -> tuple[Region, ...]:
        return self._regions

    @property
    def index(self) -> Mapping[str, int]:
        return self._index

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self._regions)

    def __len__(self):
        return len(self._regions)

    def __iter__(self):
        return iter(self._regions)

    def __getitem__(self, key: int | str) -> Region:
        if isinstance(key, str):
            return self._regions[self._index[key]]
        return self._regions[key]

    def __contains__(self, region_id) -> bool:
        return region_id in self._index

    def __eq__(self, other):
        if not isinstance(other, RegionCollection):
            return NotImplemented
        return self._regions == other._regions

    def __repr__(self):
        return f"RegionCollection({len(self)} regions)"

    def subset(self, ids: Iterable[str]) -> "RegionCollection":
        """Regions whose id is in ``ids``, keeping this collection's order."""
        keep = set(ids)
        return RegionCollection(r for r in self._regions if r.id in keep)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


class AttributeTable:
    """Numeric columns keyed by region id with explicit missing masks.

    Missing cells carry NaN in the value array *and* ``True`` in the mask;
    the mask is authoritative.
    """

    def __init__(
        self,
        ids: Sequence[str],
        columns: Mapping[str, Sequence[float]],
        missing: Mapping[str, Sequence[bool]] | None = None,
    ):
        self._ids = tuple(str(i) for i in ids)
        index = {}
        for pos, rid in enumerate(self._ids):
            if rid in index:
                raise CSVError(f"duplicate id {rid!r}")
            index[rid] = pos
        self._index = MappingProxyType(index)
        n = len(self._ids)
        cols, masks = {}, {}
        for name, values in columns.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"column {name!r} has length {arr.shape}, expected {n}")
            if missing is not None and name in missing:
                mask = np.asarray(missing[name], dtype=bool)
            else:
                mask = ~np.isfinite(arr)
            if mask.shape != (n,):
                raise ValueError(f"missing mask for {name!r} has wrong length")
            if not np.all(np.isfinite(arr[~mask])):
                raise ValueError(f"column {name!r} has non-finite values outside its mask")
            arr = np.where(mask, np.nan, arr)
            cols[name] = _readonly(arr)
            masks[name] = _readonly(mask)
        self._columns = MappingProxyType(cols)
        self._missing = MappingProxyType(masks)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def columns(self) -> Mapping[str, np.ndarray]:
        return self._columns

    @property
    def missing(self) -> Mapping[str, np.ndarray]:
        return self._missing

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(self._columns)

    def __len__(self):
        return len(self._ids)

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __eq__(self, other):
        if not isinstance(other, AttributeTable):
            return NotImplemented
        if self._ids != other._ids or self.column_names != other.column_names:
            return False
        return all(
            np.array_equal(self._missing[c], other._missing[c])
            and np.array_equal(self._columns[c], other._columns[c], equal_nan=True)
            for c in self._columns
        )

    def __repr__(self):
        return f"AttributeTable({len(self)} rows, columns={list(self._columns)})"

    def position(self, region_id: str) -> int:
        return self._index[region_id]

    def has_id(self, region_id: str) -> bool:
        return region_id in self._index

    def column(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise KeyError(f"no column {name!r}; have {list(self._columns)}") from None

    def is_missing(self, name: str) -> np.ndarray:
        return self._missing[name]

    def value(self, region_id: str, name: str) -> float | None:
        pos = self._index[region_id]
        if self._missing[name][pos]:
            return None
        return float(self._columns[name][pos])

    def subset(self, ids: Sequence[str]) -> "AttributeTable":
        """Rows for ``ids`` in the given order."""
        pos = np.array([self._index[i] for i in ids], dtype=int)
        return AttributeTable(
            ids,
            {c: v[pos] for c, v in self._columns.items()},
            {c: m[pos] for c, m in self._missing.items()},
        )

    def with_column(self, name: str, values, missing=None) -> "AttributeTable":
        cols = dict(self._columns)
        masks = dict(self._missing)
        cols[name] = values
        masks[name] = missing if missing is not None else ~np.isfinite(np.asarray(values, float))
        return AttributeTable(self._ids, cols, masks)

    def rename(self, mapping: Mapping[str, str]) -> "AttributeTable":
        """Rename columns ``old -> new``; unmapped columns keep their names."""
        cols = {mapping.get(c, c): v for c, v in self._columns.items()}
        masks = {mapping.get(c, c): m for c, m in self._missing.items()}
        if len(cols) != len(self._columns):
            raise ValueError("column rename produced duplicate names")
        return AttributeTable(self._ids, cols, masks)


@dataclass(frozen=True)
class DroppedRecord:
    id: str
    reason: str


@dataclass(frozen=True)
class Dataset:
    """Regions joined to their attributes, plus the audit trail of exclusions."""

    regions: RegionCollection
    attributes: AttributeTable
    dropped: tuple[DroppedRecord, ...] = ()

    def __post_init__(self):
        if self.regions.ids != self.attributes.ids:
            raise JoinError("dataset regions and attribute rows are not aligned")

    @property
    def ids(self) -> tuple[str, ...]:
        return self.attributes.ids

    def __len__(self):
        return len(self.attributes)


# ---------------------------------------------------------------------------
# GeoJSON
# ---------------------------------------------------------------------------


def _parse_ring(raw, where: str) -> Ring:
    if not isinstance(raw, list):
        raise GeoJSONError(f"{where}: ring is not an array")
    pts = []
    for k, pt in enumerate(raw):
        if (
            not isinstance(pt, list)
            or len(pt) < 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pt[:2])
        ):
            raise GeoJSONError(f"{where}: position {k} is not a coordinate pair")
        pts.append((float(pt[0]), float(pt[1])))
    ring = tuple(pts)
    _check_ring(ring, where)
    return ring


def _parse_polygon(raw, where: str) -> Polygon:
    if not isinstance(raw, list) or not raw:
        raise GeoJSONError(f"{where}: polygon needs at least one ring")
    return tuple(_parse_ring(r, f"{where} ring {i}") for i, r in enumerate(raw))


def parse_geojson(data: bytes, id_property: str = "GEOID") -> RegionCollection:
    """Parse a FeatureCollection of Polygon/MultiPolygon features.

    Parameters
    ----------
    data : bytes
        UTF-8 encoded GeoJSON text.
    id_property : str
        Feature property holding the region identifier.

    Raises
    ------
    GeoJSONError
        On malformed JSON (with the byte offset), non-polygonal geometry,
        unclosed rings, a feature without the id property, or duplicate ids.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise GeoJSONError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        bom = 3 if data.startswith(b"\xef\xbb\xbf") else 0
        offset = bom + len(text[: exc.pos].encode("utf-8"))
        raise GeoJSONError(f"malformed JSON: {exc.msg}", offset=offset) from None

    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoJSONError("top-level object is not a FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise GeoJSONError("FeatureCollection has no features array")

    regions = []
    seen = set()
    for i, feat in enumerate(features):
        where = f"feature {i}"
        if not isinstance(feat, dict) or feat.get("type") != "Feature":
            raise GeoJSONError(f"{where}: not a Feature")
        props = feat.get("properties") or {}
        if id_property not in props or props[id_property] in (None, ""):
            raise GeoJSONError(f"{where}: missing id property {id_property!r}")
        rid = str(props[id_property])
        if rid in seen:
            raise GeoJSONError(f"duplicate id {rid!r}")
        seen.add(rid)
        geom = feat.get("geometry")
        if not isinstance(geom, dict):
            raise GeoJSONError(f"{where}: missing geometry")
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            polygons = (_parse_polygon(coords, where),)
        elif gtype == "MultiPolygon":
            if not isinstance(coords, list) or not coords:
                raise GeoJSONError(f"{where}: empty MultiPolygon")
            polygons = tuple(
                _parse_polygon(p, f"{where} part {k}") for k, p in enumerate(coords)
            )
        else:
            raise GeoJSONError(f"{where}: unsupported geometry type {gtype!r}")
        regions.append(Region(rid, polygons, MappingProxyType(dict(props))))
    return RegionCollection(regions)


def read_geojson(path, id_property: str = "GEOID") -> RegionCollection:
    return parse_geojson(Path(path).read_bytes(), id_property=id_property)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _is_missing_token(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def parse_attribute_csv(data: bytes, id_column: str) -> AttributeTable:
    """Parse a headered, comma-separated attribute file.

    Empty cells and the tokens ``NA``/``null`` (any case) are missing; every
    other cell must be a finite decimal number.  Rows are numbered from 1 with
    the header as row 1.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise CSVError(f"invalid UTF-8 at byte {exc.start}") from None
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CSVError("empty CSV, no header row") from None
    header = [h.strip() for h in header]
    if id_column not in header:
        raise CSVError(f"header has no id column {id_column!r}", row=1)
    if len(set(header)) != len(header):
        raise CSVError("duplicate column names in header", row=1)
    id_pos = header.index(id_column)
    names = [h for h in header if h != id_column]

    ids: list[str] = []
    values = {name: [] for name in names}
    for rownum, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise CSVError(f"expected {len(header)} fields, found {len(row)}", row=rownum)
        rid = row[id_pos].strip()
        if not rid:
            raise CSVError("empty id", row=rownum, column=id_column)
        ids.append(rid)
        for name, cell in zip(header, row):
            if name == id_column:
                continue
            if _is_missing_token(cell):
                values[name].append(None)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise CSVError(f"non-numeric cell {cell!r}", row=rownum, column=name) from None
            if not np.isfinite(v):
                raise CSVError(f"non-finite cell {cell!r}", row=rownum, column=name)
            values[name].append(v)

    cols = {n: [np.nan if v is None else v for v in vs] for n, vs in values.items()}
    masks = {n: [v is None for v in vs] for n, vs in values.items()}
    return AttributeTable(ids, cols, masks)


def read_attribute_csv(path, id_column: str) -> AttributeTable:
    return parse_attribute_csv(Path(path).read_bytes(), id_column)


# ---------------------------------------------------------------------------
# Census-style HTTP API
# ---------------------------------------------------------------------------

# ACS annotation values that stand for "no estimate" in numeric fields.
ACS_SENTINELS = (
    -999999999.0,
    -888888888.0,
    -666666666.0,
    -555555555.0,
    -333333333.0,
    -222222222.0,
)

Transport = Callable[[str, float], tuple[int, bytes]]


def urllib_transport(url: str, timeout: float) -> tuple[int, bytes]:
    """GET ``url``; network failures surface as ``OSError``."""
    req = urllib.request.Request(url, method="GET")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read() or b""


@dataclass(frozen=True)
class ApiConfig:
    endpoint: str
    key: str | None = None
    cache_dir: str | os.PathLike | None = None
    max_retries: int = 3
    backoff: float = 0.5
    max_concurrency: int = 4
    timeout: float = 30.0
    missing_sentinels: tuple[float, ...] = ACS_SENTINELS


@dataclass(frozen=True)
class Geography:
    """A state/county pair, optionally narrowed to specific tracts.

    Without tracts the county is one request (``tract:*``); with tracts each
    tract is its own request.
    """

    state: str
    county: str
    tracts: tuple[str, ...] = ()

    def units(self) -> list[str]:
        if not self.tracts:
            return [f"state:{self.state} county:{self.county} tract:*"]
        return [f"state:{self.state} county:{self.county} tract:{t}" for t in self.tracts]


class ResponseCache:
    """On-disk cache keyed by the percent-encoded request URL."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    @staticmethod
    def key(url: str) -> str:
        return urllib.parse.quote(url, safe="")

    def path(self, url: str) -> Path:
        return self.directory / self.key(url)

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, url: str) -> bytes | None:
        p = self.path(url)
        return p.read_bytes() if p.is_file() else None

    def put(self, url: str, body: bytes) -> None:
        key = self.key(url)
        with self._lock(key):
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".part-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(body)
                os.replace(tmp, self.directory / key)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


def build_request_url(api: ApiConfig, codes: Sequence[str], unit: str) -> str:
    params = [("get", ",".join(codes)), ("for", "block group:*"), ("in", unit)]
    if api.key:
        params.append(("key", api.key))
    return api.endpoint + "?" + urllib.parse.urlencode(params, quote_via=urllib.parse.quote)


def _get(url: str, api: ApiConfig, transport: Transport, cache: ResponseCache | None,
         sleep: Callable[[float], None]) -> bytes:
    if cache is not None:
        hit = cache.get(url)
        if hit is not None:
            return hit
    attempt = 0
    while True:
        try:
            status, body = transport(url, api.timeout)
            break
        except OSError as exc:
            if attempt >= api.max_retries:
                raise RetryableFetchError(
                    f"network failure after {attempt + 1} attempts: {exc}"
                ) from exc
            delay = api.backoff * (2 ** attempt)
            log.warning("GET %s failed (%s); retrying in %.2fs", url, exc, delay)
            sleep(delay)
            attempt += 1
    if not 200 <= status < 300:
        prefix = body[:200].decode("utf-8", "replace")
        raise FetchError(f"status {status}: {prefix}", status=status, body_prefix=prefix)
    if cache is not None:
        cache.put(url, body)
    return body


_GEO_FIELDS = ("state", "county", "tract", "block group")


def _rows_from_response(body: bytes, codes: Sequence[str], url: str):
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FetchError(f"unparseable response from {url}: {exc}") from None
    if not isinstance(doc, list) or not doc or not isinstance(doc[0], list):
        raise FetchError(f"response from {url} is not a table")
    header = doc[0]
    for name in (*codes, *_GEO_FIELDS):
        if name not in header:
            raise FetchError(f"response from {url} lacks column {name!r}")
    width = len(header)
    for k, row in enumerate(doc[1:], start=1):
        if not isinstance(row, list) or len(row) != width:
            raise FetchError(
                f"row count mismatch in response from {url}: row {k} has "
                f"{len(row) if isinstance(row, list) else '?'} fields, header has {width}"
            )
    return header, doc[1:]


def fetch_attributes(
    api: ApiConfig,
    variable_map: Mapping[str, str],
    geography: Geography | Sequence[Geography],
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> AttributeTable:
    """Fetch block-group attributes, one GET per geography unit.

    ``variable_map`` maps output column names to remote variable codes.  The
    resulting ids are the concatenated state+county+tract+block group codes.
    Responses are cached under ``api.cache_dir`` and replayed byte-for-byte.
    """
    if not variable_map:
        raise FetchError("variable_map is empty")
    transport = transport or urllib_transport
    geos = [geography] if isinstance(geography, Geography) else list(geography)
    codes = list(dict.fromkeys(variable_map.values()))
    cache = ResponseCache(api.cache_dir) if api.cache_dir is not None else None
    urls = [build_request_url(api, codes, unit) for g in geos for unit in g.units()]

    workers = max(1, min(api.max_concurrency, len(urls)))
    if workers == 1:
        bodies = [_get(u, api, transport, cache, sleep) for u in urls]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            bodies = list(pool.map(lambda u: _get(u, api, transport, cache, sleep), urls))

    sentinels = set(api.missing_sentinels)
    ids: list[str] = []
    cols = {name: [] for name in variable_map}
    for url, body in zip(urls, bodies):
        header, rows = _rows_from_response(body, codes, url)
        pos = {h: i for i, h in enumerate(header)}
        for row in rows:
            ids.append("".join(str(row[pos[g]]) for g in _GEO_FIELDS))
            for name, code in variable_map.items():
                raw = row[pos[code]]
                if raw is None or (isinstance(raw, str) and _is_missing_token(raw)):
                    cols[name].append(np.nan)
                    continue
                try:
                    v = float(raw)
                except (TypeError, ValueError):
                    raise FetchError(f"non-numeric value {raw!r} for {code} in {url}") from None
                cols[name].append(np.nan if v in sentinels or not np.isfinite(v) else v)
    return AttributeTable(ids, cols)


# ---------------------------------------------------------------------------
# Join and missing-data policy
# ---------------------------------------------------------------------------


def join(regions: RegionCollection, table: AttributeTable) -> Dataset:
    """Inner join on id; both kinds of orphan are recorded as dropped."""
    kept = [r.id for r in regions if table.has_id(r.id)]
    if not kept:
        raise JoinError("no regions joined")
    dropped = [DroppedRecord(r.id, "no-attributes") for r in regions if not table.has_id(r.id)]
    dropped += [DroppedRecord(i, "no-geometry") for i in table.ids if i not in regions]
    return Dataset(regions.subset(kept), table.subset(kept), tuple(dropped))


def apply_missing_policy(ds: Dataset, required: Sequence[str]) -> Dataset:
    """Listwise deletion over ``required`` columns.

    The recorded reason names the first missing column in the table's own
    column order, so the outcome does not depend on the order of ``required``.
    """
    req = set(required)
    absent = req.difference(ds.attributes.column_names)
    if absent:
        raise MissingDataError(f"required columns not in dataset: {sorted(absent)}")
    checked = [c for c in ds.attributes.column_names if c in req]
    keep, dropped = [], []
    for pos, rid in enumerate(ds.ids):
        bad = next((c for c in checked if ds.attributes.is_missing(c)[pos]), None)
        if bad is None:
            keep.append(rid)
        else:
            dropped.append(DroppedRecord(rid, f"missing:{bad}"))
    if not keep:
        raise MissingDataError("empty dataset after missing-data policy")
    if not dropped:
        return ds
    return Dataset(
        ds.regions.subset(keep),
        ds.attributes.subset(keep),
        ds.dropped + tuple(dropped),
    )
