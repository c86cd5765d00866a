"""Command-line entry point: ``deprivity run | weights | stats``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from deprivity import __version__, autocorr, contiguity, stattests
from deprivity.config import load_config
from deprivity.errors import ConfigError, DeprivityError
from deprivity.ingest import read_attribute_csv, read_geojson
from deprivity.pipeline import run_pipeline
from deprivity.report import emit_table

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(
            output_dir=Path(args.out) if args.out else None,
            seed=args.seed,
            workers=args.workers,
            gstar_all_indices=True if args.gstar_all_indices else None,
            figures=True if args.figures else None,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_pipeline(cfg)
    for city, kind, path in result.manifest():
        print(f"{city}\t{kind}\t{path}")
    for city, msg in result.failures.items():
        print(f"FAILED {msg}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_FAILED


def _cmd_weights(args) -> int:
    rc = read_geojson(args.geojson, args.id_property)
    if args.scheme == "queen":
        w = contiguity.build_queen(rc, args.quantum)
    elif args.scheme == "rook":
        w = contiguity.build_rook(rc, args.quantum)
    else:
        w = contiguity.build_inverse_distance(rc, args.power, args.cutoff)
    if args.row_standardize:
        w = contiguity.row_standardize(w)
    Path(args.export).write_text(contiguity.format_weights(w), encoding="utf-8")
    s = contiguity.neighbor_stats(w, rc.ids)
    print(f"n={w.n} links={len(w.links())} min={s.min} max={s.max} mean={s.mean:.3f} islands={s.island_count}")
    return EXIT_OK


def _column(args, name=None):
    table = read_attribute_csv(args.csv, args.id_column)
    col = name or args.column
    if np.any(table.is_missing(col)):
        raise DeprivityError(f"column {col!r} has missing cells")
    return table, table.column(col)


def _cmd_summary(args) -> int:
    _, x = _column(args)
    s = stattests.summary_stats(x)
    jb = f"{s.jb[0]:.4f} ({s.jb[1]:.4f})" if s.jb else "NA"
    print(f"n={s.n} mean={s.mean:.6g} median={s.median:.6g} max={s.max:.6g} min={s.min:.6g} "
          f"sd={s.sd:.6g} z_max={s.z_max:.4f} z_min={s.z_min:.4f} jb={jb}")
    return EXIT_OK


def _cmd_corr(args) -> int:
    table = read_attribute_csv(args.csv, args.id_column)
    names = args.columns
    ct = stattests.correlation_table({n: table.column(n) for n in names})
    rows = []
    for method, mat in ct.methods().items():
        for i, a in enumerate(names):
            for j in range(i + 1):
                rows.append((method, a, names[j], mat[i, j]))
    if args.out:
        emit_table(args.out, ("method", "row", "col", "value"), rows)
    for r in rows:
        print(f"{r[0]}\t{r[1]}\t{r[2]}\t{r[3]:.6f}")
    return EXIT_OK


def _cmd_kw(args) -> int:
    table = read_attribute_csv(args.csv, args.id_column)
    x = table.column(args.column)
    g = table.column(args.group_column)
    groups = [x[g == v] for v in np.unique(g)]
    res = stattests.kruskal_wallis(groups)
    print(f"H={res.H:.6f} df={res.df} p={res.p_value:.6g}")
    return EXIT_OK


def _cmd_jenks(args) -> int:
    _, x = _column(args)
    b = stattests.jenks_breaks(x, args.k)
    print("breaks: " + ", ".join(f"{v:.6g}" for v in b.breaks))
    return EXIT_OK


def _cmd_moran(args) -> int:
    rc = read_geojson(args.geojson, args.id_property)
    table = read_attribute_csv(args.csv, args.id_column)
    x = table.subset(rc.ids).column(args.column)
    w = contiguity.build_queen(rc) if args.scheme == "queen" else contiguity.build_rook(rc)
    if args.row_standardize:
        w = contiguity.row_standardize(w)
    res = autocorr.morans_i(x, w)
    perm = autocorr.permutation_test("univariate", x, w, args.permutations, args.seed)
    print(f"I={res.I:.6f} E[I]={res.expected:.6f} p_perm={perm.p_value:.4f} "
          f"(n_perm={perm.n_permutations})")
    return EXIT_OK


def _cmd_gstar(args) -> int:
    rc = read_geojson(args.geojson, args.id_property)
    table = read_attribute_csv(args.csv, args.id_column)
    x = table.subset(rc.ids).column(args.column)
    w = contiguity.add_self_neighbors(contiguity.build_queen(rc))
    g = autocorr.hotspots(x, w, args.threshold)
    if args.out:
        emit_table(args.out, ("id", "z", "label"), zip(rc.ids, g.z, g.labels))
    counts = {lab: g.labels.count(lab) for lab in autocorr.LABELS}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deprivity", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--gstar-all-indices", action="store_true")
    run.add_argument("--figures", action="store_true", help="also render matplotlib PNG figures")
    run.set_defaults(func=_cmd_run)

    wt = sub.add_parser("weights", help="build and export a spatial weights matrix")
    wt.add_argument("--geojson", required=True)
    wt.add_argument("--scheme", choices=("queen", "rook", "invdist"), default="queen")
    wt.add_argument("--export", required=True)
    wt.add_argument("--id-property", default="GEOID")
    wt.add_argument("--quantum", type=float, default=contiguity.DEFAULT_QUANTUM)
    wt.add_argument("--power", type=float, default=1.0)
    wt.add_argument("--cutoff", type=float)
    wt.add_argument("--row-standardize", action="store_true")
    wt.set_defaults(func=_cmd_weights)

    st = sub.add_parser("stats", help="one-off statistics on CSV columns")
    ss = st.add_subparsers(dest="stat", required=True)

    def csv_args(sp, column=True):
        sp.add_argument("--csv", required=True)
        sp.add_argument("--id-column", default="GEOID")
        if column:
            sp.add_argument("--column", required=True)

    s = ss.add_parser("summary", help="mean/median/extremes/SD, z-extremes and Jarque-Bera")
    csv_args(s)
    s.set_defaults(func=_cmd_summary)

    s = ss.add_parser("corr", help="Pearson/Spearman/Kendall tables")
    csv_args(s, column=False)
    s.add_argument("--columns", nargs="+", required=True)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_corr)

    s = ss.add_parser("kw", help="Kruskal-Wallis across the groups of a numeric code column")
    csv_args(s)
    s.add_argument("--group-column", required=True)
    s.set_defaults(func=_cmd_kw)

    s = ss.add_parser("jenks", help="Jenks natural breaks for one column")
    csv_args(s)
    s.add_argument("--k", type=int, default=5)
    s.set_defaults(func=_cmd_jenks)

    spatial = (
        ("moran", _cmd_moran, "Moran's I with a permutation p-value"),
        ("gstar", _cmd_gstar, "Getis-Ord G* hot and cold spot counts"),
    )
    for name, func, text in spatial:
        s = ss.add_parser(name, help=f"{text} (GeoJSON plus CSV)")
        csv_args(s)
        s.add_argument("--geojson", required=True)
        s.add_argument("--id-property", default="GEOID")
        if name == "moran":
            s.add_argument("--scheme", choices=("queen", "rook"), default="queen")
            s.add_argument("--row-standardize", action="store_true")
            s.add_argument("--permutations", type=int, default=999)
            s.add_argument("--seed", type=int, default=42)
        else:
            s.add_argument("--threshold", type=float, default=autocorr.DEFAULT_THRESHOLD)
            s.add_argument("--out")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DeprivityError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
