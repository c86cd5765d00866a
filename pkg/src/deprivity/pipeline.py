"""End-to-end driver: ingest, indices, spatial and non-spatial statistics.

Each city runs in isolation and writes into its own subdirectory of the
output directory.  A failing city is recorded with the stage that failed
and does not stop the others.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from deprivity import autocorr, contiguity, report, stattests
from deprivity.config import CityConfig, PipelineConfig
from deprivity.deprivation import BROAD, INDEX_NAMES, build_bundle
from deprivity.errors import DegenerateDataError, StageError
from deprivity.ingest import (
    apply_missing_policy,
    fetch_attributes,
    join,
    read_attribute_csv,
    read_geojson,
)

log = logging.getLogger(__name__)

INDEX_REQUIRED = tuple(c for c in BROAD if c != "percmedy") + ("medinc",)

TABLE_FILES = {
    "components_summary": "table1_components_summary.csv",
    "pca_models": "table2_pca_models.csv",
    "morans": "table3_morans.csv",
    "index_correlations": "table4_index_correlations.csv",
    "index_summaries": "table5_index_summaries.csv",
    "group_summaries": "table6_group_summaries.csv",
    "kw_tests": "table7_kw_tests.csv",
    "socio_correlations": "table8_socio_correlations.csv",
    "bivariate_moran": "table9_bivariate_moran.csv",
}


@dataclass
class CityReport:
    city: str
    directory: Path
    files: dict[str, Path] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


@dataclass
class ReportSet:
    cities: dict[str, CityReport] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def manifest(self) -> list[tuple[str, str, Path]]:
        return [(c, kind, p) for c, r in self.cities.items() for kind, p in r.files.items()]


def log_series(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DegenerateDataError("log transform needs positive values")
    return np.array([math.log(v) for v in x])


class _Stages:
    """Runs callables under a stage name so failures can be tagged."""

    def __init__(self, city: str):
        self.city = city

    def __call__(self, stage: str, fn: Callable, *args, **kw):
        try:
            return fn(*args, **kw)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(self.city, stage, exc) from exc


def _load_table(city: CityConfig):
    if city.attributes is not None:
        table = read_attribute_csv(city.attributes, city.id_column)
    else:
        sel = city.api
        table = fetch_attributes(sel.api, sel.variables, sel.geographies)
    if city.columns:
        table = table.rename({src: canon for canon, src in city.columns.items()})
    return table


def run_city(city: CityConfig, cfg: PipelineConfig) -> CityReport:
    stage = _Stages(city.name)
    out = Path(cfg.output_dir) / city.name
    out.mkdir(parents=True, exist_ok=True)
    rep = CityReport(city.name, out)

    rc = stage("ingest", read_geojson, city.geometry, city.id_property)
    table = stage("ingest", _load_table, city)
    ds = stage("join", join, rc, table)
    required = list(dict.fromkeys(INDEX_REQUIRED + tuple(cfg.socio)))
    ds = stage("missing-data", apply_missing_policy, ds, required)
    bundle = stage("indices", build_bundle, ds)
    for m in bundle.models.values():
        rep.warnings.extend(m.warnings)
    indices = bundle.series()

    def build_weights():
        if cfg.scheme == "queen":
            w = contiguity.build_queen(ds.regions, cfg.quantum)
        elif cfg.scheme == "rook":
            w = contiguity.build_rook(ds.regions, cfg.quantum)
        else:
            w = contiguity.build_inverse_distance(ds.regions, cfg.power, cfg.cutoff)
        w_self = contiguity.add_self_neighbors(w, 1.0)
        if cfg.row_standardize:
            w = contiguity.row_standardize(w)
        return w, w_self

    w, w_self = stage("weights", build_weights)
    summary = contiguity.neighbor_stats(w, ds.ids)
    if summary.island_count:
        rep.warnings.append(f"{summary.island_count} islands: {', '.join(summary.island_ids)}")

    socio_raw = {v: ds.attributes.column(v) for v in cfg.socio}
    logs = dict(cfg.log_transform)
    socio_model = {}
    for v in cfg.socio:
        if v in logs:
            socio_model[logs[v]] = stage("transform", log_series, socio_raw[v])
        else:
            socio_model[v] = socio_raw[v]

    def moran_rows():
        rows = []
        for name, x in indices.items():
            res = autocorr.morans_i(x, w)
            perm = autocorr.permutation_test(
                "univariate", x, w, cfg.permutations, cfg.seed, workers=cfg.workers
            )
            rows.append((city.name, name, res.I, res.expected, res.n, res.S0,
                         perm.p_value, perm.mean, perm.sd, perm.n_permutations, perm.seed))
        return rows

    moran = stage("autocorrelation", moran_rows)
    corr = stage("correlations", stattests.correlation_table, indices)

    def index_summary_rows():
        rows = []
        for name, x in indices.items():
            s = stattests.summary_stats(x)
            jb, jbp = s.jb if s.jb else (None, None)
            rows.append((city.name, name, s.mean, s.median, s.max, s.min, s.sd,
                         s.z_max, s.z_min, jb, jbp, s.n))
        return rows

    t5 = stage("summaries", index_summary_rows)

    def component_rows():
        cm = bundle.component_stats[6]
        rows = []
        for name in cm.names:
            s = stattests.summary_stats(cm.column(name))
            rows.append((city.name, name, s.mean, s.median, s.max, s.min, s.sd, s.n))
        return rows

    t1 = stage("summaries", component_rows)

    gstar_targets = INDEX_NAMES if cfg.gstar_all_indices else ("pca6",)
    gstars = {
        name: stage("hotspots", autocorr.hotspots, indices[name], w_self, cfg.gstar_threshold)
        for name in gstar_targets
    }
    labels = gstars["pca6"].labels

    def group_rows():
        gs = autocorr.group_summaries(labels, socio_raw)
        rows = []
        for group in (autocorr.ALL, autocorr.HOT, autocorr.COLD, autocorr.NEITHER):
            st = gs[group]
            for v in gs.variables:
                rows.append((city.name, group, st.count, v, st.mean[v], st.sd[v], st.min[v], st.max[v]))
        return rows

    t6 = stage("group-summaries", group_rows)

    def kw_rows():
        lab = np.asarray(labels)
        rows = []
        for v, x in socio_model.items():
            groups = [x[lab == g] for g in autocorr.LABELS if np.any(lab == g)]
            if len(groups) < 2:
                rows.append((city.name, v, None, None, None, len(groups)))
                continue
            kw = stattests.kruskal_wallis(groups)
            rows.append((city.name, v, kw.H, kw.df, kw.p_value, len(groups)))
        return rows

    t7 = stage("kruskal-wallis", kw_rows)

    def socio_rows():
        t8, t9 = [], []
        for v, y in socio_model.items():
            for name, x in indices.items():
                t8.append((city.name, v, name, stattests.spearman(x, y)))
                t9.append((city.name, v, name, autocorr.bivariate_morans_i(x, y, w).I))
        return t8, t9

    t8, t9 = stage("socio-correlations", socio_rows)

    def emit():
        f = rep.files
        f["components_summary"] = report.emit_table(
            out / TABLE_FILES["components_summary"],
            ("city", "component", "mean", "median", "max", "min", "sd", "n"), t1)
        pca_rows = []
        for spec in (4, 6):
            m = bundle.models[spec]
            for k, name in enumerate(m.names):
                pca_rows.append((city.name, spec, k + 1, m.eigenvalues[k], name, m.loadings[k, 0]))
        f["pca_models"] = report.emit_table(
            out / TABLE_FILES["pca_models"],
            ("city", "spec", "number", "eigenvalue", "variable", "pc1_loading"), pca_rows)
        f["morans"] = report.emit_table(
            out / TABLE_FILES["morans"],
            ("city", "index", "I", "expected", "n", "S0", "p_perm", "perm_mean", "perm_sd",
             "n_permutations", "seed"), moran)
        corr_rows = []
        for method, mat in corr.methods().items():
            for i, a in enumerate(corr.names):
                for j in range(i + 1):
                    corr_rows.append((city.name, method, a, corr.names[j], mat[i, j]))
        f["index_correlations"] = report.emit_table(
            out / TABLE_FILES["index_correlations"], ("city", "method", "row", "col", "value"), corr_rows)
        f["index_summaries"] = report.emit_table(
            out / TABLE_FILES["index_summaries"],
            ("city", "index", "mean", "median", "max", "min", "sd", "z_max", "z_min", "jb", "jb_p", "n"), t5)
        f["group_summaries"] = report.emit_table(
            out / TABLE_FILES["group_summaries"],
            ("city", "group", "n", "variable", "mean", "sd", "min", "max"), t6)
        f["kw_tests"] = report.emit_table(
            out / TABLE_FILES["kw_tests"], ("city", "variable", "H", "df", "p_value", "groups"), t7)
        f["socio_correlations"] = report.emit_table(
            out / TABLE_FILES["socio_correlations"], ("city", "variable", "index", "spearman"), t8)
        f["bivariate_moran"] = report.emit_table(
            out / TABLE_FILES["bivariate_moran"], ("city", "variable", "index", "I"), t9)
        for name, g in gstars.items():
            f[f"gstar_{name}"] = report.emit_table(
                out / f"gstar_{name}.csv", ("id", "z", "label"),
                zip(ds.ids, g.z, g.labels))
        f["hotspot_geojson"] = report.emit_hotspot_geojson(
            out / "hotspots.geojson", ds, bundle, gstars["pca6"], city.id_property)
        f["dropped"] = report.emit_dropped(out / "dropped.csv", ds.dropped)
        for name, x in indices.items():
            breaks = classify_for_map(x, cfg.breaks_k)
            f[f"choropleth_{name}"] = report.emit_choropleth_svg(
                out / f"choropleth_{name}.svg", ds.regions, x, breaks,
                title=f"{city.name}: {name.upper()} ({breaks.k} natural-break classes)")
            if cfg.figures:
                from deprivity import plotting

                f[f"figure_{name}"] = plotting.plot_choropleth(
                    out / f"figure_{name}.png", ds.regions, x, breaks, title=f"{city.name} {name.upper()}")
                f[f"moran_scatter_{name}"] = plotting.plot_moran_scatter(
                    out / f"moran_scatter_{name}.png", x, w, title=f"{city.name} {name.upper()}")
        for name, g in gstars.items():
            f[f"hotspots_{name}_svg"] = report.emit_hotspot_svg(
                out / f"hotspots_{name}.svg", ds.regions, g.labels,
                title=f"{city.name}: G* hot and cold spots, {name.upper()}")

    stage("emit", emit)
    return rep


def classify_for_map(x, k: int) -> stattests.BreaksResult:
    """Jenks classes, shrinking ``k`` when there are too few distinct values."""
    distinct = len(np.unique(np.asarray(x, dtype=float)))
    k = min(k, distinct)
    if k < 2:
        return stattests.BreaksResult(1, (), tuple(0 for _ in range(len(x))))
    return stattests.jenks_breaks(x, k)


def run_pipeline(cfg: PipelineConfig) -> ReportSet:
    """Run every configured city; failures are collected, not raised."""
    result = ReportSet()

    def one(city):
        try:
            return city.name, run_city(city, cfg), None
        except StageError as exc:
            log.error("%s", exc)
            return city.name, None, str(exc)
        except Exception as exc:  # unexpected: still isolate the city
            msg = str(StageError(city.name, "unknown", exc))
            log.exception("%s", msg)
            return city.name, None, msg

    if cfg.workers > 1 and len(cfg.cities) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(one, cfg.cities))
    else:
        outcomes = [one(c) for c in cfg.cities]
    for name, rep, err in outcomes:
        if err is None:
            result.cities[name] = rep
            for wmsg in rep.warnings:
                log.warning("[%s] %s", name, wmsg)
        else:
            result.failures[name] = err
    return result
