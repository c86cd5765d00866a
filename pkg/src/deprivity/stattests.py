"""Non-spatial statistics: correlations, rank tests, normality, Jenks breaks.

Sums go through :func:`math.fsum`.  It is exactly rounded, so a statistic
does not depend on summation order, chunking or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from deprivity.errors import DegenerateDataError

fsum = math.fsum


def as_series(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d series, got shape {arr.shape}")
    return arr


def mean(x) -> float:
    x = as_series(x)
    return fsum(x) / len(x)


def sum_sq_dev(x) -> float:
    x = as_series(x)
    d = x - mean(x)
    return fsum(d * d)


def sample_sd(x) -> float:
    """Standard deviation with divisor ``n - 1``."""
    x = as_series(x)
    return math.sqrt(sum_sq_dev(x) / (len(x) - 1))


def population_sd(x) -> float:
    x = as_series(x)
    return math.sqrt(sum_sq_dev(x) / len(x))


def median(x) -> float:
    s = np.sort(as_series(x))
    n = len(s)
    mid = n // 2
    if n % 2:
        return float(s[mid])
    return float((s[mid - 1] + s[mid]) / 2)


def _paired(x, y):
    x, y = as_series(x), as_series(y)
    if len(x) != len(y):
        raise ValueError(f"series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ValueError("need at least 3 observations")
    return x, y


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def pearson(x, y) -> float:
    x, y = _paired(x, y)
    dx = x - mean(x)
    dy = y - mean(y)
    sxx, syy = fsum(dx * dx), fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise DegenerateDataError("zero variance in correlation input")
    r = fsum(dx * dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def rank_with_ties(x) -> np.ndarray:
    """Ranks 1..n; tied values share the mean of their positional ranks."""
    x = as_series(x)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    start = 0
    n = len(x)
    while start < n:
        end = start
        while end + 1 < n and sx[end + 1] == sx[start]:
            end += 1
        ranks[order[start : end + 1]] = (start + end + 2) / 2
        start = end + 1
    return ranks


def spearman(x, y) -> float:
    x, y = _paired(x, y)
    return pearson(rank_with_ties(x), rank_with_ties(y))


def _tie_pairs(sorted_values) -> int:
    total = 0
    run = 1
    for a, b in zip(sorted_values, sorted_values[1:]):
        if a == b:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _merge_count(seq: list) -> int:
    """Sort ``seq`` in place; return the number of inversions (strict)."""
    n = len(seq)
    if n < 2:
        return 0
    buf = seq[:]
    swaps = 0
    width = 1
    src, dst = seq, buf
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            dst[k : k + mid - i] = src[i:mid]
            k += mid - i
            dst[k : k + hi - j] = src[j:hi]
        src, dst = dst, src
        width *= 2
    if src is not seq:
        seq[:] = src
    return swaps


def kendall_tau_b(x, y) -> float:
    """Tie-corrected Kendall tau via merge-sort inversion counting, O(n log n)."""
    x, y = _paired(x, y)
    n = len(x)
    order = np.lexsort((y, x))
    xs = x[order].tolist()
    ys = y[order].tolist()
    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(xs)
    joint = _tie_pairs(list(zip(xs, ys)))
    swaps = _merge_count(ys)
    n2 = _tie_pairs(ys)
    if n0 == n1 or n0 == n2:
        raise DegenerateDataError("all values tied in a Kendall input")
    # pairs tied in x only are ordered by y, so they contribute no swaps
    s = n0 - n1 - n2 + joint - 2 * swaps
    return s / math.sqrt((n0 - n1) * (n0 - n2))


@dataclass(frozen=True)
class CorrelationTable:
    """Lower-triangular correlation matrices; the upper triangle is NaN."""

    names: tuple[str, ...]
    pearson: np.ndarray
    spearman: np.ndarray
    kendall: np.ndarray

    def methods(self) -> dict[str, np.ndarray]:
        return {"pearson": self.pearson, "spearman": self.spearman, "kendall": self.kendall}


def correlation_table(series_map: Mapping[str, Sequence[float]]) -> CorrelationTable:
    names = tuple(series_map)
    if len(names) < 2:
        raise ValueError("need at least two series")
    p = len(names)
    mats = {m: np.full((p, p), np.nan) for m in ("pearson", "spearman", "kendall")}
    funcs = {"pearson": pearson, "spearman": spearman, "kendall": kendall_tau_b}
    for i in range(p):
        for m in mats.values():
            m[i, i] = 1.0
        for j in range(i):
            for name, f in funcs.items():
                mats[name][i, j] = f(series_map[names[i]], series_map[names[j]])
    return CorrelationTable(names, mats["pearson"], mats["spearman"], mats["kendall"])


# ---------------------------------------------------------------------------
# Distribution tails and tests
# ---------------------------------------------------------------------------


def chi_square_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution, ``Q(df/2, x/2)``."""
    if x < 0:
        raise ValueError(f"chi-square statistic must be non-negative, got {x}")
    if df < 1 or int(df) != df:
        raise ValueError(f"df must be a positive integer, got {df}")
    if x == 0:
        return 1.0
    if df == 2:
        return math.exp(-x / 2)
    return float(special.gammaincc(df / 2, x / 2))


@dataclass(frozen=True)
class KwResult:
    H: float
    df: int
    p_value: float


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KwResult:
    """Kruskal-Wallis H with the tie correction and a chi-square p-value."""
    groups = [as_series(g) for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("every group must be non-empty")
    pooled = np.concatenate(groups)
    N = len(pooled)
    if N < 3:
        raise ValueError("need at least 3 observations in total")
    ranks = rank_with_ties(pooled)
    terms = []
    start = 0
    for g in groups:
        r = ranks[start : start + len(g)]
        rbar = fsum(r) / len(g)
        terms.append(len(g) * rbar * rbar)
        start += len(g)
    H = 12 / (N * (N + 1)) * fsum(terms) - 3 * (N + 1)
    ties = np.unique(pooled, return_counts=True)[1].astype(np.int64)
    correction = 1 - int(np.sum(ties**3 - ties)) / (N**3 - N)
    if correction == 0:
        raise DegenerateDataError("all values identical; Kruskal-Wallis undefined")
    H = max(H / correction, 0.0)
    df = len(groups) - 1
    return KwResult(H, df, chi_square_sf(H, df))


def jarque_bera(x) -> tuple[float, float]:
    """Jarque-Bera statistic from population skewness and excess kurtosis."""
    x = as_series(x)
    n = len(x)
    if n < 8:
        raise ValueError(f"Jarque-Bera needs n >= 8, got {n}")
    d = x - mean(x)
    d2 = d * d
    m2 = fsum(d2) / n
    if m2 == 0:
        raise DegenerateDataError("zero variance; Jarque-Bera undefined")
    m3 = fsum(d2 * d) / n
    m4 = fsum(d2 * d2) / n
    skew = m3 / m2**1.5
    kurt = m4 / (m2 * m2) - 3
    jb = n / 6 * (skew * skew + kurt * kurt / 4)
    return jb, chi_square_sf(jb, 2)


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    median: float
    max: float
    min: float
    sd: float
    z_max: float
    z_min: float
    jb: tuple[float, float] | None


def z_extremes(mean_: float, sd: float, maximum: float, minimum: float) -> tuple[float, float]:
    """Distance of the extremes from the mean in SD units."""
    return (maximum - mean_) / sd, (minimum - mean_) / sd


def summary_stats(x) -> SummaryStats:
    """Mean/median/extremes/SD row; ``jb`` is None below 8 observations."""
    x = as_series(x)
    n = len(x)
    if n < 2:
        raise ValueError("summary statistics need at least 2 observations")
    m = mean(x)
    sd = sample_sd(x)
    hi, lo = float(np.max(x)), float(np.min(x))
    if sd > 0:
        z_hi, z_lo = z_extremes(m, sd, hi, lo)
    else:
        z_hi = z_lo = math.nan
    jb = jarque_bera(x) if n >= 8 and sd > 0 else None
    return SummaryStats(n, m, median(x), hi, lo, sd, z_hi, z_lo, jb)


# ---------------------------------------------------------------------------
# Jenks natural breaks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BreaksResult:
    k: int
    breaks: tuple[float, ...]
    assignment: tuple[int, ...]
    sorted_cuts: tuple[int, ...] = ()

    def classify(self, value: float) -> int:
        for c, b in enumerate(self.breaks):
            if value <= b:
                return c
        return len(self.breaks)


def partition_ssd(sorted_values, cuts: Sequence[int]) -> float:
    """Total within-class squared deviation for classes ``[c_i, c_{i+1})``."""
    s = as_series(sorted_values)
    bounds = [0, *cuts, len(s)]
    return fsum(sum_sq_dev(s[a:b]) for a, b in zip(bounds, bounds[1:]))


def jenks_breaks(x, k: int) -> BreaksResult:
    """Exact Fisher-Jenks classification into ``k`` contiguous classes.

    Cuts never separate equal values.  Among optimal partitions the one with
    the smallest first cut wins, then the smallest second cut, and so on.
    """
    x = as_series(x)
    if k < 2:
        raise ValueError("k must be at least 2")
    s = np.sort(x)
    n = len(s)
    if len(np.unique(s)) < k:
        raise ValueError(f"fewer than {k} distinct values")

    shift = s - mean(s)
    c1 = np.concatenate(([0.0], np.cumsum(shift)))
    c2 = np.concatenate(([0.0], np.cumsum(shift * shift)))

    def ssd(a: int, b: int) -> float:
        m = b - a
        t = c1[b] - c1[a]
        return max(0.0, (c2[b] - c2[a]) - t * t / m)

    allowed = [c for c in range(1, n) if s[c - 1] < s[c]]
    # suffix[j][a]: best cost of splitting s[a:] into j classes
    INF = math.inf
    suffix = [[INF] * (n + 1) for _ in range(k + 1)]
    suffix[1] = [ssd(a, n) if a < n else INF for a in range(n + 1)]
    for j in range(2, k + 1):
        row = suffix[j]
        prev = suffix[j - 1]
        for a in range(n):
            best = INF
            for c in allowed:
                if c <= a:
                    continue
                v = ssd(a, c) + prev[c]
                if v < best:
                    best = v
            row[a] = best

    scale = max(1.0, float(c2[n]))
    tol = 1e-12 * scale
    cuts = []
    a = 0
    for j in range(k, 1, -1):
        target = suffix[j][a]
        chosen = None
        for c in allowed:
            if c <= a:
                continue
            if ssd(a, c) + suffix[j - 1][c] <= target + tol:
                chosen = c
                break
        cuts.append(chosen)
        a = chosen

    breaks = tuple(float(s[c - 1]) for c in cuts)
    res = BreaksResult(k, breaks, (), tuple(cuts))
    return BreaksResult(k, breaks, tuple(res.classify(v) for v in x), tuple(cuts))
