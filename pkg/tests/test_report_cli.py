import json
import shutil
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from deprivity import cli, synth
from deprivity.config import config_from_text, load_config
from deprivity.errors import ConfigError
from deprivity.ingest import parse_geojson
from deprivity.pipeline import TABLE_FILES, run_pipeline
from deprivity.report import choropleth_svg, emit_table, format_number, palette_for
from deprivity.stattests import BreaksResult, jenks_breaks

from conftest import feature_collection, grid_collection, square

SVG = "{http://www.w3.org/2000/svg}"


# -- tables ----------------------------------------------------------------


def test_format_number():
    assert format_number(3.3043887123456789) == "3.30438871234568"
    assert format_number(float("nan")) == "NA"
    assert format_number(None) == "NA"
    assert format_number(-0.0) == "0"
    assert format_number(7) == "7"


def test_emit_empty_table(tmp_path):
    p = emit_table(tmp_path / "t.csv", ("a", "b"), [])
    assert p.read_bytes() == b"a,b\n"


def test_emit_table_utf8_lf(tmp_path):
    p = emit_table(tmp_path / "t.csv", ("city", "v"), [("Zürich", 1 / 3)])
    raw = p.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8") == "city,v\nZürich,0.333333333333333\n"


def test_emit_table_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_table(tmp_path / "missing" / "dir" / "t.csv", ("a",), [])


# -- SVG -------------------------------------------------------------------


def test_palette_sizes():
    assert len(palette_for(5)) == 5
    assert len(palette_for(3)) == 3
    assert len(set(palette_for(7))) == 7


def test_single_square_one_class():
    rc = parse_geojson(feature_collection({"A": square(0, 0)}))
    svg = choropleth_svg(rc, [1.0], BreaksResult(1, (), (0,)))
    root = ET.fromstring(svg)
    assert len(root.findall(f".//{SVG}path")) == 1


def test_two_colour_gap_fixture():
    rc = grid_collection(3, 2)
    x = [1, 2, 3, 10, 11, 12]
    svg = choropleth_svg(rc, x, jenks_breaks(x, 2))
    root = ET.fromstring(svg)
    fills = {p.get("fill") for p in root.findall(f".//{SVG}path")}
    assert len(fills) == 2


def test_svg_viewbox_margin_and_flip():
    rc = grid_collection(2, 1, size=10.0)
    root = ET.fromstring(choropleth_svg(rc, [0.0, 1.0], jenks_breaks([0.0, 1.0], 2)))
    assert root.get("viewBox") is not None
    paths = root.findall(f".//{SVG}path")
    assert len(paths) == 2


# -- config ----------------------------------------------------------------


def test_config_defaults(tmp_path):
    cfg = config_from_text("city.a.geometry = a.geojson\ncity.a.attributes = a.csv\n", base=tmp_path, env={})
    assert cfg.seed == 42 and cfg.breaks_k == 5 and cfg.gstar_threshold == 1.96
    assert cfg.cities[0].geometry == tmp_path / "a.geojson"


@pytest.mark.parametrize("text", [
    "",
    "city.a.geometry = a.geojson\n",
    "city.a.geometry = a.geojson\ncity.a.attributes = a.csv\nbreaks.k = 1\n",
    "city.a.geometry = a.geojson\ncity.a.attributes = a.csv\ngstar.threshold = 0\n",
    "city.a.geometry = a.geojson\ncity.a.attributes = a.csv\nbogus = 1\n",
    "city.a.geometry = a.geojson\ncity.a.attributes = a.csv\nseed = many\n",
])
def test_config_errors(text, tmp_path):
    with pytest.raises(ConfigError):
        config_from_text(text, base=tmp_path, env={})


def test_cache_env_overrides(tmp_path):
    text = "cache_dir = c\ncity.a.geometry = a.geojson\ncity.a.attributes = a.csv\n"
    assert config_from_text(text, base=tmp_path, env={}).cache_dir == tmp_path / "c"
    env = {"DEPRIVITY_CACHE": str(tmp_path / "elsewhere")}
    assert config_from_text(text, base=tmp_path, env=env).cache_dir == tmp_path / "elsewhere"


def test_url_with_hash_survives_comment_stripping(tmp_path):
    text = ("city.a.geometry = a.geojson\ncity.a.api.endpoint = https://h/x#frag  # comment\n"
            "city.a.api.state = 39\ncity.a.api.county = 035\ncity.a.api.variables.percpov = V1\n")
    cfg = config_from_text(text, base=tmp_path, env={})
    assert cfg.cities[0].api.api.endpoint == "https://h/x#frag"


# -- pipeline and CLI ------------------------------------------------------


@pytest.fixture(scope="module")
def synthtown(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthtown")
    synth.write(d)
    return d


def test_bundled_fixture_is_current(tmp_path):
    synth.write(tmp_path)
    for name in ("synthtown.geojson", "synthtown.csv", "synthtown.conf"):
        assert (tmp_path / name).read_bytes() == (synth.bundled_dir() / name).read_bytes()


def test_run_manifest(synthtown, tmp_path):
    cfg = load_config(synthtown / "synthtown.conf").with_overrides(output_dir=tmp_path)
    rs = run_pipeline(cfg)
    assert rs.ok
    kinds = {k for _, k, _ in rs.manifest()}
    assert set(TABLE_FILES) <= kinds
    assert "hotspot_geojson" in kinds
    assert sum(k.startswith("choropleth_") for k in kinds) >= 2
    for _, _, path in rs.manifest():
        assert path.exists()
    written = {p.name for p in (tmp_path / "synthtown").iterdir()}
    assert written == {p.name for _, _, p in rs.manifest()}


def test_hotspot_geojson_properties(synthtown, tmp_path):
    cfg = load_config(synthtown / "synthtown.conf").with_overrides(output_dir=tmp_path)
    run_pipeline(cfg)
    out = tmp_path / "synthtown"
    doc = json.loads((out / "hotspots.geojson").read_text())
    src = {f["properties"]["GEOID"]: f for f in json.loads((synthtown / "synthtown.geojson").read_text())["features"]}
    added = {"sd4", "sd6", "pca4", "pca6", "gstar_z", "gstar_label"}
    for feat in doc["features"]:
        orig = src[feat["properties"]["GEOID"]]
        assert set(feat["properties"]) - set(orig["properties"]) == added
        assert feat["geometry"] == orig["geometry"]
    dropped = (out / "dropped.csv").read_text().splitlines()[1:]
    dropped_ids = {line.split(",")[0] for line in dropped}
    assert len(dropped_ids) == 4
    assert not dropped_ids & {f["properties"]["GEOID"] for f in doc["features"]}
    assert len(parse_geojson((out / "hotspots.geojson").read_bytes())) == 197


def test_rerun_is_byte_identical(synthtown, tmp_path):
    cfg = load_config(synthtown / "synthtown.conf")
    a, b = tmp_path / "a", tmp_path / "b"
    run_pipeline(cfg.with_overrides(output_dir=a))
    run_pipeline(cfg.with_overrides(output_dir=b))
    for f in sorted((a / "synthtown").iterdir()):
        assert f.read_bytes() == (b / "synthtown" / f.name).read_bytes(), f.name


def test_broken_city_is_isolated(synthtown, tmp_path, capsys):
    shutil.copy(synthtown / "synthtown.geojson", tmp_path / "good.geojson")
    shutil.copy(synthtown / "synthtown.csv", tmp_path / "good.csv")
    shutil.copy(synthtown / "synthtown.geojson", tmp_path / "bad.geojson")
    (tmp_path / "bad.csv").write_text("GEOID,percpov\n390351001000,abc\n")
    (tmp_path / "two.conf").write_text(
        "output_dir = out\npermutations = 99\n"
        "city.good.geometry = good.geojson\ncity.good.attributes = good.csv\n"
        "city.bad.geometry = bad.geojson\ncity.bad.attributes = bad.csv\n"
    )
    code = cli.main(["run", "--config", str(tmp_path / "two.conf"), "--workers", "2"])
    assert code == 1
    err = capsys.readouterr().err
    assert "[bad] stage=ingest" in err
    good = tmp_path / "out" / "good"
    for name in TABLE_FILES.values():
        assert (good / name).stat().st_size > 0


def test_cli_config_error(tmp_path, capsys):
    (tmp_path / "x.conf").write_text("nonsense line\n")
    assert cli.main(["run", "--config", str(tmp_path / "x.conf")]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "absent.conf")]) == 2


def test_cli_run_ok(synthtown, tmp_path, capsys):
    code = cli.main(["run", "--config", str(synthtown / "synthtown.conf"), "--out", str(tmp_path)])
    assert code == 0
    assert "table3_morans.csv" in capsys.readouterr().out


def test_cli_gstar_all_indices(synthtown, tmp_path):
    code = cli.main(["run", "--config", str(synthtown / "synthtown.conf"), "--out", str(tmp_path),
                     "--gstar-all-indices"])
    assert code == 0
    for name in ("sd4", "sd6", "pca4", "pca6"):
        assert (tmp_path / "synthtown" / f"gstar_{name}.csv").exists()


def test_cli_weights_export(tmp_path, capsys):
    geo = tmp_path / "g.geojson"
    geo.write_bytes(feature_collection({f"r{k}": square(k % 2, k // 2) for k in range(4)}))
    out = tmp_path / "w.txt"
    assert cli.main(["weights", "--geojson", str(geo), "--scheme", "queen", "--export", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n 4"
    assert len([ln for ln in lines[2:]]) == 6
    assert "links=6" in capsys.readouterr().out
    assert cli.main(["weights", "--geojson", str(geo), "--scheme", "rook", "--export", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2 + 4


def test_cli_stats(synthtown, capsys):
    csv_path = str(synthtown / "synthtown.csv")
    assert cli.main(["stats", "summary", "--csv", csv_path, "--column", "percpov"]) == 0
    assert "jb=" in capsys.readouterr().out
    assert cli.main(["stats", "jenks", "--csv", csv_path, "--column", "percpov", "--k", "4"]) == 0
    assert capsys.readouterr().out.count(",") == 2
    # percvac has a missing cell, which the one-off commands refuse
    assert cli.main(["stats", "summary", "--csv", csv_path, "--column", "percvac"]) == 1


def test_cli_stats_spatial(synthtown, capsys):
    args = ["--csv", str(synthtown / "synthtown.csv"), "--geojson", str(synthtown / "synthtown.geojson"),
            "--column", "percsnap"]
    assert cli.main(["stats", "moran", *args, "--permutations", "99"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("I=")
    # the orphan attribute row is ignored; the missing cells live in other columns
    assert cli.main(["stats", "gstar", *args]) == 0
    assert "Hot=" in capsys.readouterr().out


def test_figures_flag(synthtown, tmp_path):
    cfg = load_config(synthtown / "synthtown.conf").with_overrides(output_dir=tmp_path, figures=True)
    rs = run_pipeline(cfg)
    pngs = [p for _, k, p in rs.manifest() if p.suffix == ".png"]
    assert len(pngs) == 8
    assert all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)
    assert np.all([p.stat().st_size > 1000 for p in pngs])
