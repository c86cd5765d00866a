"""Spatial weights from polygon geometry.

Queen and rook contiguity are decided on vertices snapped to a square grid
of side ``quantum`` degrees, so matching is exact, transitive and linear in
the number of vertices.  Weight matrices are stored as sorted adjacency
lists; dense storage only occurs for inverse-distance weights without a
cutoff.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Sequence

import numpy as np

from deprivity.errors import WeightsError
from deprivity.ingest import RegionCollection, Ring

DEFAULT_QUANTUM = 1e-7


class Scheme(str, enum.Enum):
    QUEEN = "Queen"
    ROOK = "Rook"
    INVERSE_DISTANCE = "InverseDistance"


Neighbor = tuple[int, float]


@dataclass(frozen=True)
class WeightsMatrix:
    """Sparse spatial weights.

    ``neighbors[i]`` is the list of ``(j, w_ij)`` sorted by ``j``.  Structure
    is symmetric; the weights are too unless the matrix is row-standardized.
    """

    n: int
    neighbors: tuple[tuple[Neighbor, ...], ...]
    scheme: Scheme
    row_standardized: bool = False
    includes_self: bool = False

    def __post_init__(self):
        if len(self.neighbors) != self.n:
            raise WeightsError(f"{len(self.neighbors)} neighbor rows for n={self.n}")
        for i, row in enumerate(self.neighbors):
            cols = [j for j, _ in row]
            if cols != sorted(set(cols)):
                raise WeightsError(f"row {i} is not sorted/unique")
            for j, w in row:
                if not 0 <= j < self.n:
                    raise WeightsError(f"row {i} references position {j}")
                if not w > 0:
                    raise WeightsError(f"non-positive weight w[{i},{j}]={w}")
            has_self = i in cols
            if has_self != self.includes_self:
                raise WeightsError(
                    f"row {i}: self link {'present' if has_self else 'absent'} but "
                    f"includes_self={self.includes_self}"
                )
        directed = {(i, j) for i, row in enumerate(self.neighbors) for j, _ in row}
        for i, j in directed:
            if (j, i) not in directed:
                raise WeightsError(f"asymmetric structure: {i}->{j} without {j}->{i}")

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(rows, cols, weights)`` arrays of every stored link, row-major."""
        rows = np.array([i for i, row in enumerate(self.neighbors) for _ in row], dtype=np.intp)
        cols = np.array([j for row in self.neighbors for j, _ in row], dtype=np.intp)
        vals = np.array([w for row in self.neighbors for _, w in row], dtype=float)
        for a in (rows, cols, vals):
            a.setflags(write=False)
        return rows, cols, vals

    @cached_property
    def s0(self) -> float:
        return math.fsum(w for row in self.neighbors for _, w in row)

    def cardinalities(self) -> list[int]:
        """Neighbor counts excluding self links."""
        return [sum(1 for j, _ in row if j != i) for i, row in enumerate(self.neighbors)]

    def links(self) -> list[tuple[int, int]]:
        """Undirected non-self links as ``(i, j)`` with ``i < j``."""
        return [(i, j) for i, row in enumerate(self.neighbors) for j, _ in row if i < j]

    def weight(self, i: int, j: int) -> float:
        for k, w in self.neighbors[i]:
            if k == j:
                return w
        return 0.0

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for i, row in enumerate(self.neighbors):
            for j, w in row:
                m[i, j] = w
        return m


def _from_pairs(n: int, pairs, scheme: Scheme) -> WeightsMatrix:
    rows: list[dict[int, float]] = [dict() for _ in range(n)]
    for i, j, w in pairs:
        rows[i][j] = w
        rows[j][i] = w
    return WeightsMatrix(
        n, tuple(tuple(sorted(r.items())) for r in rows), scheme, False, False
    )


def _snap(v: float, quantum: float) -> int:
    # round half away from zero
    q = abs(v) / quantum
    return int(math.copysign(math.floor(q + 0.5), v))


def _snapped_ring(ring: Ring, quantum: float) -> list[tuple[int, int]]:
    return [(_snap(x, quantum), _snap(y, quantum)) for x, y in ring]


def _check_quantum(quantum: float) -> None:
    if not quantum > 0:
        raise WeightsError(f"quantum must be positive, got {quantum}")


def _pairs_sharing(keys_by_region: Sequence[set]) -> set[tuple[int, int]]:
    owners: dict[object, list[int]] = defaultdict(list)
    for i, keys in enumerate(keys_by_region):
        for k in keys:
            owners[k].append(i)
    pairs = set()
    for members in owners.values():
        if len(members) > 1:
            pairs.update(combinations(members, 2))
    return pairs


def build_queen(rc: RegionCollection, quantum: float = DEFAULT_QUANTUM) -> WeightsMatrix:
    """Binary queen contiguity: any shared snapped vertex makes neighbors."""
    _check_quantum(quantum)
    vertex_sets = [
        {pt for ring in region.rings for pt in _snapped_ring(ring, quantum)} for region in rc
    ]
    pairs = _pairs_sharing(vertex_sets)
    return _from_pairs(len(rc), ((i, j, 1.0) for i, j in sorted(pairs)), Scheme.QUEEN)


def build_rook(rc: RegionCollection, quantum: float = DEFAULT_QUANTUM) -> WeightsMatrix:
    """Binary rook contiguity: neighbors share a whole snapped edge segment."""
    _check_quantum(quantum)
    edge_sets = []
    for region in rc:
        edges = set()
        for ring in region.rings:
            pts = _snapped_ring(ring, quantum)
            for a, b in zip(pts, pts[1:]):
                if a != b:
                    edges.add((a, b) if a < b else (b, a))
        edge_sets.append(edges)
    pairs = _pairs_sharing(edge_sets)
    return _from_pairs(len(rc), ((i, j, 1.0) for i, j in sorted(pairs)), Scheme.ROOK)


def _ring_area_centroid(ring: Ring) -> tuple[float, float, float]:
    """Signed shoelace area and centroid of a closed ring."""
    a = cx = cy = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
        cross = x0 * y1 - x1 * y0
        a += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    a *= 0.5
    if a == 0.0:
        xs, ys = zip(*ring[:-1])
        return 0.0, sum(xs) / len(xs), sum(ys) / len(ys)
    return a, cx / (6.0 * a), cy / (6.0 * a)


def region_centroid(region) -> tuple[float, float]:
    """Area-weighted centroid in planar lon/lat; holes carry negative weight."""
    total = sx = sy = 0.0
    fallback = []
    for polygon in region.polygons:
        for k, ring in enumerate(polygon):
            area, cx, cy = _ring_area_centroid(ring)
            weight = abs(area) if k == 0 else -abs(area)
            total += weight
            sx += weight * cx
            sy += weight * cy
            if k == 0:
                fallback.append((cx, cy))
    if total == 0.0:
        xs, ys = zip(*fallback)
        return sum(xs) / len(xs), sum(ys) / len(ys)
    return sx / total, sy / total


def inverse_distance_from_points(points, power: float = 1.0, cutoff: float | None = None) -> WeightsMatrix:
    """``w_ij = d_ij ** -power`` for every pair within ``cutoff``."""
    if not power > 0:
        raise WeightsError(f"power must be positive, got {power}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            d = math.hypot(pts[i, 0] - pts[j, 0], pts[i, 1] - pts[j, 1])
            if d == 0.0:
                raise WeightsError(f"coincident centroids ({i},{j})")
            if cutoff is None or d <= cutoff:
                pairs.append((i, j, d ** -power))
    return _from_pairs(n, pairs, Scheme.INVERSE_DISTANCE)


def build_inverse_distance(rc: RegionCollection, power: float = 1.0, cutoff: float | None = None) -> WeightsMatrix:
    """Inverse-distance weights between region centroids (planar degrees)."""
    return inverse_distance_from_points([region_centroid(r) for r in rc], power, cutoff)


def row_standardize(w: WeightsMatrix) -> WeightsMatrix:
    rows = []
    for row in w.neighbors:
        total = math.fsum(v for _, v in row)
        rows.append(tuple((j, v / total) for j, v in row) if row else row)
    return WeightsMatrix(w.n, tuple(rows), w.scheme, True, w.includes_self)


def add_self_neighbors(w: WeightsMatrix, self_weight: float = 1.0) -> WeightsMatrix:
    if w.includes_self:
        raise WeightsError("weights already include self links")
    if not self_weight > 0:
        raise WeightsError(f"self_weight must be positive, got {self_weight}")
    rows = tuple(tuple(sorted(row + ((i, float(self_weight)),))) for i, row in enumerate(w.neighbors))
    return WeightsMatrix(w.n, rows, w.scheme, w.row_standardized, True)


@dataclass(frozen=True)
class NeighborSummary:
    min: int
    max: int
    mean: float
    island_count: int
    island_ids: tuple[str, ...]


def neighbor_stats(w: WeightsMatrix, ids: Sequence[str] | None = None) -> NeighborSummary:
    counts = w.cardinalities()
    if not counts:
        return NeighborSummary(0, 0, 0.0, 0, ())
    islands = [i for i, c in enumerate(counts) if c == 0]
    names = tuple(ids[i] if ids is not None else str(i) for i in islands)
    return NeighborSummary(min(counts), max(counts), sum(counts) / len(counts), len(islands), names)


# ---------------------------------------------------------------------------
# Text export
# ---------------------------------------------------------------------------


def format_weights(w: WeightsMatrix) -> str:
    """Serialize to the ``n <count>`` / ``i j w`` link format.

    A ``#`` comment after the header records scheme and flags.  Row-standardized
    matrices have unequal ``w_ij``/``w_ji``; their link lines carry both as
    ``i j w_ij w_ji``.
    """
    lines = [
        f"n {w.n}",
        f"# scheme={w.scheme.value} row_standardized={int(w.row_standardized)} "
        f"includes_self={int(w.includes_self)}",
    ]
    symmetric = all(w.weight(i, j) == w.weight(j, i) for i, j in w.links())
    for i, j in w.links():
        if symmetric:
            lines.append(f"{i} {j} {w.weight(i, j)!r}")
        else:
            lines.append(f"{i} {j} {w.weight(i, j)!r} {w.weight(j, i)!r}")
    if w.includes_self:
        lines.extend(f"{i} {i} {w.weight(i, i)!r}" for i in range(w.n))
    return "\n".join(lines) + "\n"


def parse_weights(text: str) -> WeightsMatrix:
    lines = [ln.strip() for ln in text.splitlines()]
    body = [ln for ln in lines if ln]
    if not body or not body[0].startswith("n "):
        raise WeightsError("weights file must start with 'n <count>'")
    try:
        n = int(body[0].split()[1])
    except (IndexError, ValueError):
        raise WeightsError(f"bad header {body[0]!r}") from None
    meta = {"scheme": Scheme.QUEEN.value, "row_standardized": "0", "includes_self": "0"}
    rows: list[dict[int, float]] = [dict() for _ in range(n)]
    saw_self = False
    for lineno, ln in enumerate(body[1:], start=2):
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        parts = ln.split()
        try:
            i, j = int(parts[0]), int(parts[1])
            ws = [float(p) for p in parts[2:]]
        except (IndexError, ValueError):
            raise WeightsError(f"line {lineno}: cannot parse {ln!r}") from None
        if len(ws) not in (1, 2) or not (0 <= i < n and 0 <= j < n):
            raise WeightsError(f"line {lineno}: bad link {ln!r}")
        if i == j:
            saw_self = True
            rows[i][i] = ws[0]
            continue
        if i > j:
            raise WeightsError(f"line {lineno}: links must have i < j")
        rows[i][j] = ws[0]
        rows[j][i] = ws[-1]
    includes_self = meta["includes_self"] == "1" or saw_self
    return WeightsMatrix(
        n,
        tuple(tuple(sorted(r.items())) for r in rows),
        Scheme(meta["scheme"]),
        meta["row_standardized"] == "1",
        includes_self,
    )
