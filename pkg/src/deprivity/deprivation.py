"""Deprivation index construction.

Two variable sets (four "narrow" components, six "broad" ones) are combined
in two ways: summing each component deflated by its own standard deviation
(SD4/SD6), and taking first-principal-component scores of the standardized
components (PCA4/PCA6).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import mpmath
import numpy as np

from deprivity.errors import ConvergenceError, DegenerateDataError, MissingDataError
from deprivity.ingest import Dataset
from deprivity.stattests import as_series, fsum, mean, median, sample_sd

NARROW = ("percpov", "unemp", "percnohs", "percsnap")
BROAD = NARROW + ("percvac", "percmedy")
# components entering the SD index with a negative sign
NEGATIVE_COMPONENTS = frozenset({"percmedy"})

INDEX_NAMES = ("sd4", "sd6", "pca4", "pca6")


class KaiserWarning(UserWarning):
    """More or fewer than one eigenvalue exceeds 1."""


@dataclass(frozen=True)
class ComponentMatrix:
    names: tuple[str, ...]
    values: np.ndarray
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values must be n x p with one column per name")
        for name, s in zip(self.names, self.sigmas):
            if not s > 0:
                raise DegenerateDataError(f"degenerate component {name}")

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]], names: Sequence[str]) -> "ComponentMatrix":
        values = np.column_stack([as_series(columns[n]) for n in names])
        sigmas = []
        for n, col in zip(names, values.T):
            s = sample_sd(col)
            if not s > 0:
                raise DegenerateDataError(f"degenerate component {n}")
            sigmas.append(s)
        values.setflags(write=False)
        return cls(tuple(names), values, tuple(sigmas))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def compute_percmedy(medinc, city_median: float) -> np.ndarray:
    """Percent deviation of each block group's median income from the city's."""
    if not city_median > 0:
        raise ValueError(f"city median must be positive, got {city_median}")
    medinc = as_series(medinc)
    if np.any(medinc <= 0):
        raise ValueError("median incomes must be positive")
    return 100 * (medinc - city_median) / city_median


def sd_index(cm: ComponentMatrix) -> np.ndarray:
    """Sum of ``value / sigma`` over components; income deviation subtracts."""
    signs = [-1.0 if n in NEGATIVE_COMPONENTS else 1.0 for n in cm.names]
    terms = [sign * (cm.values[:, k] / s) for k, (sign, s) in enumerate(zip(signs, cm.sigmas))]
    stacked = np.column_stack(terms)
    return np.array([fsum(row) for row in stacked])


def standardize(x) -> np.ndarray:
    x = as_series(x)
    sd = sample_sd(x)
    if not sd > 0:
        raise DegenerateDataError("cannot standardize a constant series")
    return (x - mean(x)) / sd


def correlation_matrix(cm: ComponentMatrix) -> np.ndarray:
    """Pearson correlations via cross-products of standardized columns."""
    z = np.column_stack([standardize(c) for c in cm.values.T])
    n, p = z.shape
    r = np.eye(p)
    for a in range(p):
        for b in range(a):
            v = fsum(z[:, a] * z[:, b]) / (n - 1)
            r[a, b] = r[b, a] = min(1.0, max(-1.0, v))
    return r


# ---------------------------------------------------------------------------
# Symmetric eigenproblem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray  # columns
    sweeps: int


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return math.sqrt(fsum((off * off).ravel()))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def jacobi_eigen(m, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Cyclic Jacobi eigen-decomposition of a symmetric matrix.

    Eigenpairs come back sorted by descending eigenvalue; each eigenvector's
    largest-magnitude entry is made positive.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    a = (a + a.T) / 2
    p = a.shape[0]
    v = np.eye(p)
    sweeps = 0
    while _off_norm(a) >= tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"no convergence after {max_sweeps} sweeps")
        sweeps += 1
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = a[i, j]
                if aij == 0.0:
                    continue
                theta = (a[j, j] - a[i, i]) / (2 * aij)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                ai = a[:, i].copy()
                aj = a[:, j].copy()
                a[:, i] = c * ai - s * aj
                a[:, j] = s * ai + c * aj
                ri = a[i, :].copy()
                rj = a[j, :].copy()
                a[i, :] = c * ri - s * rj
                a[j, :] = s * ri + c * rj
                a[i, j] = a[j, i] = 0.0
                vi = v[:, i].copy()
                vj = v[:, j].copy()
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = np.column_stack([_canonical_sign(v[:, k]) for k in order])
    return EigenDecomposition(values, vectors, sweeps)


def polish_eigenpairs(m, eig: EigenDecomposition, dps: int = 40,
                      min_gap: float = 1e-6) -> EigenDecomposition:
    """Refine eigenpairs to high precision, then round once to float64.

    Each pair gets three steps of shifted inverse iteration in ``dps``-digit
    arithmetic, using the float eigenvalue as the shift.  The outcome is the
    nearest-double rounding of the exact eigenpair of ``m``, independent of
    the solver that produced the starting point.  Pairs whose eigenvalue lies
    within ``min_gap`` of another are returned unchanged.
    """
    p = len(eig.values)
    vals = eig.values.copy()
    vecs = eig.vectors.copy()
    with mpmath.workdps(dps):
        A = mpmath.matrix([[mpmath.mpf(float(x)) for x in row] for row in np.asarray(m, float)])
        for k in range(p):
            others = np.delete(eig.values, k)
            if others.size and np.min(np.abs(others - eig.values[k])) < min_gap:
                continue
            shift = mpmath.mpf(float(eig.values[k]))
            B = A - shift * mpmath.eye(p)
            x = mpmath.matrix([mpmath.mpf(float(c)) for c in eig.vectors[:, k]])
            try:
                for _ in range(3):
                    y = mpmath.lu_solve(B, x)
                    x = y / mpmath.norm(y)
            except ZeroDivisionError:
                # shift is an exact eigenvalue; the start vector is already exact enough
                pass
            dot = sum(x[i] * eig.vectors[i, k] for i in range(p))
            if dot < 0:
                x = -x
            lam = (x.T * A * x)[0]
            vals[k] = float(lam)
            vecs[:, k] = [float(x[i]) for i in range(p)]
    return EigenDecomposition(vals, vecs, eig.sweeps)


def kaiser_select(eigenvalues: Sequence[float]) -> int:
    """Number of eigenvalues strictly greater than one."""
    return sum(1 for v in eigenvalues if v > 1)


@dataclass(frozen=True)
class PcaModel:
    names: tuple[str, ...]
    eigenvalues: np.ndarray
    loadings: np.ndarray  # p x p, columns are eigenvectors
    selected: int
    sign_fixed: bool
    warnings: tuple[str, ...] = field(default=())

    @property
    def pc1(self) -> np.ndarray:
        return self.loadings[:, 0]

    def loading(self, name: str, component: int = 0) -> float:
        return float(self.loadings[self.names.index(name), component])


def pca_index(cm: ComponentMatrix, anchor: str = "percpov") -> tuple[np.ndarray, PcaModel]:
    """First-principal-component scores of the standardized components.

    The PC1 direction is oriented so that ``anchor``'s loading is
    non-negative (a higher score means more deprived).
    """
    if cm.p < 2:
        raise ValueError("PCA needs at least two components")
    z = np.column_stack([standardize(c) for c in cm.values.T])
    r = correlation_matrix(cm)
    eig = polish_eigenpairs(r, jacobi_eigen(r))
    loadings = eig.vectors.copy()
    sign_fixed = False
    if anchor in cm.names:
        if loadings[cm.names.index(anchor), 0] < 0:
            loadings[:, 0] = -loadings[:, 0]
            sign_fixed = True
    notes = []
    selected = kaiser_select(eig.values)
    if selected != 1:
        msg = f"{selected} eigenvalues exceed 1 for components {list(cm.names)}; using PC1"
        warnings.warn(msg, KaiserWarning, stacklevel=2)
        notes.append(msg)
    v1 = loadings[:, 0]
    scores = np.array([fsum(row * v1) for row in z])
    loadings.setflags(write=False)
    model = PcaModel(cm.names, eig.values, loadings, selected, sign_fixed, tuple(notes))
    return scores, model


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BundleConfig:
    """Maps canonical component names to dataset column names."""

    columns: Mapping[str, str] = field(default_factory=dict)
    medinc: str = "medinc"

    def column_for(self, component: str) -> str:
        return self.columns.get(component, component)

    def required_columns(self) -> list[str]:
        return [self.column_for(c) for c in BROAD if c != "percmedy"] + [self.medinc]


@dataclass(frozen=True)
class IndexBundle:
    ids: tuple[str, ...]
    sd4: np.ndarray
    sd6: np.ndarray
    pca4: np.ndarray
    pca6: np.ndarray
    models: Mapping[int, PcaModel]
    component_stats: Mapping[int, ComponentMatrix]
    city_median: float

    def __post_init__(self):
        n = len(self.ids)
        for name in INDEX_NAMES:
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has wrong length")

    def series(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in INDEX_NAMES}


def build_bundle(ds: Dataset, config: BundleConfig | None = None) -> IndexBundle:
    """All four indices over the dataset's regions, recomputed from scratch."""
    config = config or BundleConfig()
    table = ds.attributes
    for col in config.required_columns():
        if col not in table:
            raise MissingDataError(f"dataset has no column {col!r}")
        if np.any(table.is_missing(col)):
            raise MissingDataError(f"column {col!r} has missing cells; apply the missing-data policy first")
    medinc = table.column(config.medinc)
    city_median = median(medinc)
    columns = {c: table.column(config.column_for(c)) for c in BROAD if c != "percmedy"}
    columns["percmedy"] = compute_percmedy(medinc, city_median)
    narrow = ComponentMatrix.from_columns(columns, NARROW)
    broad = ComponentMatrix.from_columns(columns, BROAD)
    pca4, m4 = pca_index(narrow)
    pca6, m6 = pca_index(broad)
    return IndexBundle(
        ids=ds.ids,
        sd4=sd_index(narrow),
        sd6=sd_index(broad),
        pca4=pca4,
        pca6=pca6,
        models={4: m4, 6: m6},
        component_stats={4: narrow, 6: broad},
        city_median=city_median,
    )
