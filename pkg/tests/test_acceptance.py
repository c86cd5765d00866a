"""Acceptance gate: fourteen criteria, one test each.

Every check records a one-line verdict in ``VERDICTS``, and the terminal
summary hook in conftest.py prints them after the run.  ``python
tests/test_acceptance.py`` runs just this file.
"""

import csv
import itertools
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from deprivity import synth
from deprivity.autocorr import bivariate_morans_i, getis_ord_gstar, morans_i, permutation_test
from deprivity.config import load_config
from deprivity.contiguity import add_self_neighbors, build_queen, build_rook
from deprivity.deprivation import BROAD, ComponentMatrix, build_bundle, jacobi_eigen, kaiser_select, pca_index
from deprivity.ingest import apply_missing_policy, join, parse_geojson, read_attribute_csv, read_geojson
from deprivity.pipeline import INDEX_REQUIRED, run_pipeline
from deprivity.stattests import (
    chi_square_sf,
    jenks_breaks,
    kendall_tau_b,
    kruskal_wallis,
    partition_ssd,
    pearson,
    rank_with_ties,
    spearman,
    summary_stats,
)

from conftest import feature_collection, grid_collection, jittered_grid

GOLDEN = Path(__file__).parent / "golden"
VERDICTS: dict[int, str] = {}


def verdict(number, title, ok, detail, elapsed=None, limit=None):
    if limit is not None and elapsed is not None and elapsed > limit:
        ok = False
        detail += f"; took {elapsed:.1f}s, limit {limit}s"
    timing = f" [{elapsed:.2f}s]" if elapsed is not None else ""
    VERDICTS[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}{timing}"
    assert ok, VERDICTS[number]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# ---------------------------------------------------------------------------


def series_with_moments(n, mean, sd, hi, lo):
    """``n`` values with exactly the given extremes, mean and sample SD."""
    u = np.linspace(-1.0, 1.0, n - 2)
    u = (u - u.mean()) / u.std(ddof=1)
    a = (mean * n - hi - lo) / (n - 2)
    ss_left = (n - 1) * sd * sd - (hi - mean) ** 2 - (lo - mean) ** 2 - (n - 2) * (a - mean) ** 2
    b = math.sqrt(ss_left / (n - 3))
    inner = a + b * u
    assert lo < inner.min() and inner.max() < hi
    return np.concatenate(([hi, lo], inner))


def test_c01_summary_z_extremes():
    with Timer() as t:
        x = series_with_moments(457, 7.40, 3.19, 17.94, 0.23)
        s = summary_stats(x)
    ok = (abs(s.mean - 7.40) < 1e-9 and abs(s.sd - 3.19) < 1e-9
          and abs(s.z_max - 3.30) <= 0.005 and abs(s.z_min - (-2.25)) <= 0.005)
    verdict(1, "z extremes from printed moments", ok,
            f"z_max={s.z_max:.4f} (3.30), z_min={s.z_min:.4f} (-2.25), N={s.n}", t.elapsed, 1)


def test_c02_jarque_bera_p_mapping():
    with Timer() as t:
        p1, p2 = chi_square_sf(4.35, 2), chi_square_sf(5.59, 2)
    ok = abs(p1 - 0.11) <= 0.005 and abs(p2 - 0.06) <= 0.005
    verdict(2, "JB p-values, df 2", ok, f"sf(4.35)={p1:.4f} (0.11), sf(5.59)={p2:.4f} (0.06)", t.elapsed, 1)


PRINTED_EIGENVALUES = {
    ("Buffalo", 4): (2.492, 0.821, 0.485, 0.202),
    ("Cleveland", 4): (2.567, 0.727, 0.466, 0.240),
    ("Detroit", 4): (2.017, 1.006, 0.592, 0.384),
    ("Milwaukee", 4): (2.757, 0.642, 0.417, 0.184),
    ("Buffalo", 6): (3.405, 0.859, 0.786, 0.501, 0.248, 0.200),
    ("Cleveland", 6): (3.408, 0.859, 0.696, 0.528, 0.305, 0.205),
    ("Detroit", 6): (2.803, 1.013, 0.806, 0.645, 0.457, 0.276),
    ("Milwaukee", 6): (3.687, 0.792, 0.631, 0.498, 0.213, 0.179),
}


def test_c03_kaiser_on_printed_eigenvalues():
    with Timer() as t:
        counts = {key: kaiser_select(vals) for key, vals in PRINTED_EIGENVALUES.items()}
    off = {f"{c}/{p}": k for (c, p), k in counts.items() if k != 1}
    detail = "all eight lists select 1" if not off else (
        f"lists selecting != 1: {off} (second eigenvalue printed above 1)")
    verdict(3, "Kaiser selection on printed eigenvalue lists", not off, detail, t.elapsed, 1)


def test_c04_pc1_sd_equals_sqrt_lambda():
    with Timer() as t:
        worst = 0.0
        rng = np.random.default_rng(4)
        fixtures = []
        for _ in range(5):
            latent = rng.standard_normal(150)
            fixtures.append({n: latent * rng.uniform(1, 3) + rng.standard_normal(150) for n in BROAD})
        d = synth.bundled_dir()
        ds = join(read_geojson(d / "synthtown.geojson"), read_attribute_csv(d / "synthtown.csv", "GEOID"))
        bundle = build_bundle(apply_missing_policy(ds, INDEX_REQUIRED))
        for spec in (4, 6):
            scores = bundle.pca4 if spec == 4 else bundle.pca6
            lam = bundle.models[spec].eigenvalues[0]
            worst = max(worst, abs(np.std(scores, ddof=1) - math.sqrt(lam)))
        for cols in fixtures:
            for names in (BROAD[:4], BROAD):
                scores, model = pca_index(ComponentMatrix.from_columns(cols, names))
                worst = max(worst, abs(np.std(scores, ddof=1) - math.sqrt(model.eigenvalues[0])))
        printed = round(math.sqrt(3.405), 2)
    ok = worst < 1e-6 and abs(printed - 1.85) <= 0.005
    verdict(4, "PC1 score SD equals sqrt(lambda1)", ok,
            f"max |sd - sqrt(l1)|={worst:.2e}; sqrt(3.405)={math.sqrt(3.405):.4f} vs printed SD 1.85",
            t.elapsed, 1)


def test_c05_checkerboard():
    with Timer() as t:
        w = build_rook(grid_collection(6, 6))
        x = np.array([1.0 if (r + c) % 2 == 0 else -1.0 for r in range(6) for c in range(6)])
        value = morans_i(x, w).I
    verdict(5, "checkerboard Moran's I", abs(value + 1) <= 1e-12, f"I={value!r}", t.elapsed, 1)


def test_c06_exact_permutation_mean():
    with Timer() as t:
        w = build_queen(grid_collection(3, 2))
        res = permutation_test("univariate", np.array([2.0, 9.0, 4.0, 1.0, 7.0, 3.0]), w, n_perm=720)
    ok = res.exact and res.n_permutations == 720 and abs(res.mean + 0.2) <= 1e-12
    verdict(6, "full-enumeration mean of I, n=6", ok,
            f"mean={res.mean!r} over {res.n_permutations} relabelings", t.elapsed, 5)


def test_c07_sparse_equals_dense():
    with Timer() as t:
        rng = np.random.default_rng(7)
        worst = 0.0
        nan_mismatch = 0
        for _ in range(20):
            nx, ny = int(rng.integers(3, 8)), int(rng.integers(3, 8))
            rc = jittered_grid(nx, ny, rng)
            n = len(rc)
            w = build_queen(rc)
            W = w.to_dense()
            Ws = add_self_neighbors(w).to_dense()
            x = rng.standard_normal(n) + np.arange(n) / n
            y = rng.standard_normal(n)
            d = x - x.mean()
            dense_i = n / W.sum() * (d @ W @ d) / (d @ d)
            zx, zy = d / x.std(), (y - y.mean()) / y.std()
            dense_b = (zx @ W @ zy) / W.sum()
            sw, sww = Ws.sum(1), (Ws**2).sum(1)
            spread = n * sww - sw**2
            dense_g = np.full(n, np.nan)
            ok_rows = spread > 0
            dense_g[ok_rows] = (Ws @ x - x.mean() * sw)[ok_rows] / (
                x.std() * np.sqrt(spread[ok_rows] / (n - 1)))
            sparse_g = getis_ord_gstar(x, add_self_neighbors(w)).z
            nan_mismatch += int(np.sum(np.isnan(sparse_g) != np.isnan(dense_g)))
            worst = max(
                worst,
                abs(morans_i(x, w).I - dense_i),
                abs(bivariate_morans_i(x, y, w).I - dense_b),
                float(np.nanmax(np.abs(sparse_g - dense_g))),
            )
    verdict(7, "sparse vs dense Moran / bivariate / G*", worst <= 1e-12 and nan_mismatch == 0,
            f"20 fixtures, max abs diff {worst:.1e}, undefined-z mismatches {nan_mismatch}", t.elapsed, 10)


def char_poly_roots(m):
    """Roots of det(lambda I - m) for symmetric 3x3, by the trigonometric method."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    minors = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0] + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
              + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
    det = (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
           - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
           + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))
    # lambda^3 - tr lambda^2 + minors lambda - det; shift lambda = t + tr/3
    s = tr / 3
    p = minors - tr * tr / 3
    q = -(2 * tr**3 / 27 - tr * minors / 3 + det)
    if p >= 0:  # triple root
        return [s, s, s]
    r = 2 * math.sqrt(-p / 3)
    arg = max(-1.0, min(1.0, 3 * q / (p * r)))
    phi = math.acos(arg) / 3
    roots = [s + r * math.cos(phi - 2 * math.pi * k / 3) for k in range(3)]
    return sorted(roots, reverse=True)


def test_c08_jacobi_vs_characteristic_polynomial():
    with Timer() as t:
        rng = np.random.default_rng(8)
        worst_val = worst_res = 0.0
        for _ in range(1000):
            a = rng.uniform(-1, 1, size=(3, 3))
            m = (a + a.T) / 2
            e = jacobi_eigen(m)
            worst_val = max(worst_val, max(abs(u - v) for u, v in zip(e.values, char_poly_roots(m))))
            for k in range(3):
                v = e.vectors[:, k]
                worst_res = max(worst_res, float(np.max(np.abs(m @ v - e.values[k] * v))))
    ok = worst_val <= 1e-8 and worst_res < 1e-9
    verdict(8, "Jacobi vs characteristic polynomial", ok,
            f"1000 trials, max |dlambda|={worst_val:.1e}, max residual={worst_res:.1e}", t.elapsed, 5)


def kendall_by_pairs(x, y):
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), 1)
    a, b = sx[iu], sy[iu]
    conc = int(np.sum(a * b > 0))
    disc = int(np.sum(a * b < 0))
    n0 = len(a)
    tx, ty = int(np.sum(a == 0)), int(np.sum(b == 0))
    return (conc - disc) / math.sqrt((n0 - tx) * (n0 - ty))


def test_c09_correlation_trio():
    with Timer() as t:
        rng = np.random.default_rng(9)
        bad_s = bad_k = done = 0
        while done < 500:
            n = int(rng.integers(3, 301))
            levels = int(rng.integers(2, 12))
            x = rng.integers(0, levels, n).astype(float)
            y = (x * rng.integers(-1, 2) + rng.integers(0, levels, n)).astype(float)
            if len(np.unique(x)) < 2 or len(np.unique(y)) < 2:
                continue
            done += 1
            bad_s += spearman(x, y) != pearson(rank_with_ties(x), rank_with_ties(y))
            bad_k += kendall_tau_b(x, y) != kendall_by_pairs(x, y)
    verdict(9, "Spearman = Pearson of ranks, fast Kendall = pair count", bad_s == 0 and bad_k == 0,
            f"500 tied datasets, mismatches: spearman {bad_s}, kendall {bad_k}", t.elapsed, 20)


def ks_uniform(p):
    p = np.sort(p)
    n = len(p)
    return float(max(np.max(np.arange(1, n + 1) / n - p), np.max(p - np.arange(n) / n)))


def test_c10_kruskal_wallis():
    with Timer() as t:
        h = kruskal_wallis([[1, 2, 3], [4, 5, 6]]).H
        rng = np.random.default_rng(10)
        pvals = []
        for _ in range(10_000):
            pooled = rng.standard_normal(30)
            rng.shuffle(pooled)
            pvals.append(kruskal_wallis([pooled[:10], pooled[10:20], pooled[20:]]).p_value)
        ks = ks_uniform(np.array(pvals))
    ok = abs(h - 27 / 7) <= 1e-12 and ks < 0.05
    verdict(10, "Kruskal-Wallis value and null uniformity", ok,
            f"H={h!r} (27/7), KS distance {ks:.4f} over 10000 splits", t.elapsed, 30)


def test_c11_jenks_vs_exhaustive():
    with Timer() as t:
        rng = np.random.default_rng(11)
        trials = mismatches = 0
        while trials < 200:
            n = int(rng.integers(2, 13))
            k = int(rng.integers(2, 5))
            x = rng.integers(0, 15, n).astype(float) if trials % 2 else rng.uniform(0, 100, n)
            s = np.sort(x)
            if len(np.unique(s)) < k:
                continue
            trials += 1
            allowed = [c for c in range(1, n) if s[c - 1] < s[c]]
            best = min(partition_ssd(s, cuts) for cuts in itertools.combinations(allowed, k - 1))
            got = partition_ssd(s, jenks_breaks(x, k).sorted_cuts)
            mismatches += abs(got - best) > 1e-9 * max(1.0, best)
    verdict(11, "Jenks DP vs exhaustive partitions", mismatches == 0,
            f"200 instances (n<=12, k<=4), mismatches {mismatches}", t.elapsed, 10)


def triangulated_grid(nx, ny, rng):
    """Jittered quads each split along a random diagonal."""
    v = {}
    for r in range(ny + 1):
        for c in range(nx + 1):
            inner = 0 < r < ny and 0 < c < nx
            jx, jy = rng.uniform(-0.3, 0.3, size=2) if inner else (0.0, 0.0)
            v[r, c] = [c + float(jx), r + float(jy)]
    rings = {}
    for r in range(ny):
        for c in range(nx):
            a, b, cc, d = v[r, c], v[r, c + 1], v[r + 1, c + 1], v[r + 1, c]
            if rng.random() < 0.5:
                rings[f"{r}-{c}a"] = [a, b, cc, a]
                rings[f"{r}-{c}b"] = [a, cc, d, a]
            else:
                rings[f"{r}-{c}a"] = [a, b, d, a]
                rings[f"{r}-{c}b"] = [b, cc, d, b]
    return parse_geojson(feature_collection(rings))


def test_c12_contiguity():
    with Timer() as t:
        rc = grid_collection(2, 2)
        q, r = len(build_queen(rc).links()), len(build_rook(rc).links())
        rng = np.random.default_rng(12)
        violations = 0
        strict = 0
        for k in range(100):
            nx, ny = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            tess = jittered_grid(nx, ny, rng) if k % 2 else triangulated_grid(nx, ny, rng)
            rook, queen = set(build_rook(tess).links()), set(build_queen(tess).links())
            violations += not rook <= queen
            strict += rook < queen
    ok = q == 6 and r == 4 and violations == 0
    verdict(12, "queen/rook links and rook within queen", ok,
            f"2x2: queen {q}, rook {r}; 100 tessellations, violations {violations} "
            f"({strict} with corner-only neighbours)", t.elapsed, 10)


def _run_synthtown(out, workers):
    cfg = load_config(synth.bundled_dir() / "synthtown.conf").with_overrides(output_dir=out, workers=workers)
    rs = run_pipeline(cfg)
    assert rs.ok, rs.failures
    return out / "synthtown"


def test_c13_golden_pipeline(tmp_path):
    with Timer() as t:
        out = _run_synthtown(tmp_path, 1)
        goldens = sorted((GOLDEN / "synthtown").iterdir())
        differing = [g.name for g in goldens if (out / g.name).read_bytes() != g.read_bytes()]
        with open(out / "table4_index_correlations.csv", newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["method"] == "pearson" and r["row"] != r["col"]]
        lowest = min(float(r["value"]) for r in rows)
    ok = not differing and len(goldens) >= 12 and len(rows) == 6 and lowest > 0.9
    detail = (f"{len(goldens) - len(differing)}/{len(goldens)} golden files byte-identical"
              + (f", differing: {differing}" if differing else "")
              + f"; min pairwise Pearson {lowest:.4f}")
    verdict(13, "golden synthtown reports", ok, detail, t.elapsed, 15)


def test_c14_thread_count_determinism(tmp_path):
    with Timer() as t:
        one = _run_synthtown(tmp_path / "w1", 1)
        eight = _run_synthtown(tmp_path / "w8", 8)
        names = sorted(p.name for p in one.iterdir())
        differing = [n for n in names if (one / n).read_bytes() != (eight / n).read_bytes()]
        same_set = names == sorted(p.name for p in eight.iterdir())
    ok = same_set and not differing
    verdict(14, "1 vs 8 worker threads", ok,
            f"{len(names) - len(differing)}/{len(names)} files identical", t.elapsed, 30)


def test_goldens_regenerate_from_oracle(tmp_path):
    """The committed goldens are exactly what the straight-line oracle writes."""
    subprocess.run([sys.executable, str(GOLDEN / "oracle_synthtown.py"), str(tmp_path)], check=True)
    for g in sorted((GOLDEN / "synthtown").iterdir()):
        assert (tmp_path / g.name).read_bytes() == g.read_bytes(), g.name


if __name__ == "__main__":
    # the conftest summary hook prints the verdict lines
    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
