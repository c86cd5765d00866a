"""Spatial statistics on a :class:`~deprivity.contiguity.WeightsMatrix`.

Global Moran's I (univariate and bivariate) with permutation inference, and
the local Getis-Ord G* z-score used to label hot and cold spots.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import permutations
from typing import Mapping, Sequence

import numpy as np

from deprivity.contiguity import WeightsMatrix
from deprivity.errors import DegenerateDataError, WeightsError
from deprivity.stattests import as_series, fsum, mean, sample_sd

HOT, COLD, NEITHER, ALL = "Hot", "Cold", "Neither", "All"
LABELS = (HOT, COLD, NEITHER)
DEFAULT_THRESHOLD = 1.96


@dataclass(frozen=True)
class PermutationResult:
    p_value: float
    mean: float
    sd: float
    n_permutations: int
    seed: int | None
    exact: bool = False


@dataclass(frozen=True)
class MoranResult:
    I: float
    n: int
    S0: float
    expected: float
    permutation: PermutationResult | None = None


def _check_inputs(x: np.ndarray, w: WeightsMatrix) -> None:
    if len(x) != w.n:
        raise ValueError(f"series has {len(x)} values, weights cover {w.n} regions")
    if w.n < 3:
        raise ValueError("Moran's I needs at least 3 regions")
    if w.includes_self:
        raise WeightsError("Moran's I is defined on weights without self links")
    if w.s0 <= 0:
        raise WeightsError("weights have no links (S0 = 0)")


def _moran_value(x: np.ndarray, w: WeightsMatrix) -> float:
    rows, cols, vals = w.csr
    d = x - mean(x)
    den = fsum(d * d)
    if den == 0:
        raise DegenerateDataError("constant attribute")
    num = fsum(vals * d[rows] * d[cols])
    return (len(x) / w.s0) * (num / den)


def _standardized(x: np.ndarray, ddof: int) -> np.ndarray:
    d = x - mean(x)
    ss = fsum(d * d)
    if ss == 0:
        raise DegenerateDataError("constant attribute")
    return d / math.sqrt(ss / (len(x) - ddof))


def _bivariate_value(x: np.ndarray, y: np.ndarray, w: WeightsMatrix, ddof: int) -> float:
    rows, cols, vals = w.csr
    zx = _standardized(x, ddof)
    zy = _standardized(y, ddof)
    return (1 / w.s0) * fsum(vals * zx[rows] * zy[cols])


def morans_i(x, w: WeightsMatrix) -> MoranResult:
    """Global Moran's I with the plain mean and the raw weights."""
    x = as_series(x)
    _check_inputs(x, w)
    n = len(x)
    return MoranResult(_moran_value(x, w), n, w.s0, -1 / (n - 1))


def bivariate_morans_i(x, y, w: WeightsMatrix, ddof: int = 0) -> MoranResult:
    """Cross-product Moran's I between ``x`` and the spatial lag of ``y``.

    Both series are z-scored with divisor ``n - ddof``.  With the default
    ``ddof=0`` the statistic for ``y = x`` equals :func:`morans_i`.
    """
    x, y = as_series(x), as_series(y)
    _check_inputs(x, w)
    if len(y) != len(x):
        raise ValueError("x and y differ in length")
    n = len(x)
    return MoranResult(_bivariate_value(x, y, w, ddof), n, w.s0, -1 / (n - 1))


def _permuted_stat(kind, x, y, w, perm, ddof):
    if kind == "univariate":
        return _moran_value(x[perm], w)
    return _bivariate_value(x, y[perm], w, ddof)


def permutation_test(
    kind: str,
    data,
    w: WeightsMatrix,
    n_perm: int = 999,
    seed: int = 42,
    workers: int = 1,
    ddof: int = 0,
) -> PermutationResult:
    """Conditional permutation inference for Moran's I.

    ``data`` is ``x`` for ``kind="univariate"`` and ``(x, y)`` for
    ``kind="bivariate"`` (``y`` is permuted, ``x`` held fixed).  Permutation
    ``k`` uses a generator seeded with ``(seed, k)``, so the outcome does not
    depend on ``workers``.  When ``n <= 7`` and ``n_perm >= n!`` every
    relabeling is enumerated instead and the p-value is exact.
    """
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    if kind == "univariate":
        x = as_series(data)
        y = None
        observed = morans_i(x, w).I
    elif kind == "bivariate":
        x, y = (as_series(v) for v in data)
        observed = bivariate_morans_i(x, y, w, ddof=ddof).I
    else:
        raise ValueError(f"unknown kind {kind!r}")
    n = len(x)

    if n <= 7 and n_perm >= math.factorial(n):
        stats = np.array(
            [_permuted_stat(kind, x, y, w, np.array(p), ddof) for p in permutations(range(n))]
        )
        hits = int(np.sum(np.abs(stats) >= abs(observed)))
        p = hits / len(stats)
        exact = True
        used_seed = None
    else:
        def one(k):
            perm = np.random.default_rng([seed, k]).permutation(n)
            return _permuted_stat(kind, x, y, w, perm, ddof)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                stats = np.array(list(pool.map(one, range(n_perm))))
        else:
            stats = np.array([one(k) for k in range(n_perm)])
        hits = int(np.sum(np.abs(stats) >= abs(observed)))
        p = (1 + hits) / (1 + n_perm)
        exact = False
        used_seed = seed

    m = fsum(stats) / len(stats)
    dev = stats - m
    sd = math.sqrt(fsum(dev * dev) / (len(stats) - 1))
    return PermutationResult(p, m, sd, len(stats), used_seed, exact)


def with_permutations(result: MoranResult, perm: PermutationResult) -> MoranResult:
    return MoranResult(result.I, result.n, result.S0, result.expected, perm)


@dataclass(frozen=True)
class GStarResult:
    z: np.ndarray
    threshold: float | None = None
    labels: tuple[str, ...] | None = None


def getis_ord_gstar(x, w_self: WeightsMatrix) -> GStarResult:
    """Per-region G* z-scores; ``w_self`` must carry self links.

    The spread term uses the population standard deviation (divisor ``n``)
    while the radical keeps its ``n - 1``.  A region whose neighbourhood
    spans every region (with equal weights) has no variance to compare
    against; its z is NaN, which classifies as ``Neither``.
    """
    x = as_series(x)
    if not w_self.includes_self:
        raise WeightsError("G* needs self-inclusive weights (add_self_neighbors)")
    n = len(x)
    if n != w_self.n:
        raise ValueError(f"series has {n} values, weights cover {w_self.n} regions")
    if n < 3:
        raise ValueError("G* needs at least 3 regions")
    xbar = mean(x)
    d = x - xbar
    s = math.sqrt(fsum(d * d) / n)
    if s == 0:
        raise DegenerateDataError("constant attribute")
    z = np.empty(n)
    for i, row in enumerate(w_self.neighbors):
        ws = np.array([v for _, v in row])
        xs = x[[j for j, _ in row]]
        sw = fsum(ws)
        sww = fsum(ws * ws)
        num = fsum(ws * xs) - xbar * sw
        spread = n * sww - sw * sw
        if spread <= 0:
            z[i] = math.nan
            continue
        z[i] = num / (s * math.sqrt(spread / (n - 1)))
    return GStarResult(z)


def classify_hotspots(z, threshold: float = DEFAULT_THRESHOLD) -> tuple[str, ...]:
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    out = []
    for v in as_series(z):
        if v >= threshold:
            out.append(HOT)
        elif v <= -threshold:
            out.append(COLD)
        else:
            out.append(NEITHER)
    return tuple(out)


def hotspots(x, w_self: WeightsMatrix, threshold: float = DEFAULT_THRESHOLD) -> GStarResult:
    g = getis_ord_gstar(x, w_self)
    return GStarResult(g.z, threshold, classify_hotspots(g.z, threshold))


@dataclass(frozen=True)
class GroupStats:
    count: int
    mean: Mapping[str, float | None]
    sd: Mapping[str, float | None]
    min: Mapping[str, float | None]
    max: Mapping[str, float | None]


@dataclass(frozen=True)
class GroupSummary:
    variables: tuple[str, ...]
    groups: Mapping[str, GroupStats]

    def __getitem__(self, label: str) -> GroupStats:
        return self.groups[label]


def _group_stats(values: Mapping[str, np.ndarray], mask: np.ndarray) -> GroupStats:
    count = int(np.sum(mask))
    means, sds, mins, maxs = {}, {}, {}, {}
    for name, col in values.items():
        sub = col[mask]
        means[name] = mean(sub) if count else None
        sds[name] = sample_sd(sub) if count >= 2 else None
        mins[name] = float(np.min(sub)) if count else None
        maxs[name] = float(np.max(sub)) if count else None
    return GroupStats(count, means, sds, mins, maxs)


def group_summaries(labels: Sequence[str], variables: Mapping[str, Sequence[float]]) -> GroupSummary:
    """Count, mean, sample SD, min and max per label group plus ``All``.

    Groups with fewer than two members report ``None`` for the SD; empty
    groups report ``None`` everywhere.
    """
    labels = np.asarray(labels)
    values = {name: as_series(v) for name, v in variables.items()}
    for name, v in values.items():
        if len(v) != len(labels):
            raise ValueError(f"variable {name!r} is not aligned with the labels")
    groups = {ALL: _group_stats(values, np.ones(len(labels), dtype=bool))}
    for label in LABELS:
        groups[label] = _group_stats(values, labels == label)
    return GroupSummary(tuple(values), groups)
