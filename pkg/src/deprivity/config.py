"""Pipeline configuration.

The file format is flat ``key = value`` assignments, one per line, with
dotted keys standing in for sections and ``#`` starting a comment::

    output_dir = reports
    weights.scheme = queen
    city.buffalo.geometry = buffalo.geojson
    city.buffalo.attributes = buffalo.csv
    city.buffalo.columns.percpov = pct_poverty

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from deprivity.errors import ConfigError
from deprivity.ingest import ApiConfig, Geography

DEFAULT_SOCIO = ("perc40min", "percpubtra", "percrent", "medinc", "percnonwhi")
DEFAULT_LOG = (("medinc", "lnmedy"),)
SCHEMES = ("queen", "rook", "invdist")
CACHE_ENV = "DEPRIVITY_CACHE"


@dataclass(frozen=True)
class ApiSelector:
    api: ApiConfig
    variables: Mapping[str, str]
    geographies: tuple[Geography, ...]


@dataclass(frozen=True)
class CityConfig:
    name: str
    geometry: Path
    attributes: Path | None = None
    api: ApiSelector | None = None
    id_property: str = "GEOID"
    id_column: str = "GEOID"
    columns: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    cities: tuple[CityConfig, ...]
    output_dir: Path = Path("reports")
    scheme: str = "queen"
    quantum: float = 1e-7
    row_standardize: bool = False
    power: float = 1.0
    cutoff: float | None = None
    gstar_threshold: float = 1.96
    gstar_all_indices: bool = False
    permutations: int = 999
    seed: int = 42
    breaks_k: int = 5
    socio: tuple[str, ...] = DEFAULT_SOCIO
    log_transform: tuple[tuple[str, str], ...] = DEFAULT_LOG
    cache_dir: Path | None = None
    figures: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.cities:
            raise ConfigError("config defines no cities")
        if self.breaks_k < 2:
            raise ConfigError("breaks.k must be at least 2")
        if not self.gstar_threshold > 0:
            raise ConfigError("gstar.threshold must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"weights.scheme must be one of {SCHEMES}")
        if self.permutations < 99:
            raise ConfigError("permutations must be at least 99")
        if not str(self.output_dir):
            raise ConfigError("output_dir is empty")
        for c in self.cities:
            if not str(c.geometry) or c.geometry == Path("."):
                raise ConfigError(f"city {c.name}: geometry path is empty")
        names = [c.name for c in self.cities]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate city names")

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def parse_assignments(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cut = line.find(" #")
        if cut >= 0:
            line = line[:cut].strip()
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _bool(key, v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _num(key, v: str, kind=float):
    try:
        return kind(v)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {v!r}") from None


def _list(v: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _log_spec(v: str) -> tuple[tuple[str, str], ...]:
    out = []
    for item in _list(v):
        parts = item.split()
        if len(parts) == 3 and parts[1] == "as":
            out.append((parts[0], parts[2]))
        elif len(parts) == 1:
            out.append((parts[0], "ln" + parts[0]))
        else:
            raise ConfigError(f"socio.log: cannot parse {item!r}")
    return tuple(out)


def _city(name: str, keys: dict[str, str], base: Path, cache_dir: Path | None) -> CityConfig:
    def path(k):
        v = keys.get(k)
        return (base / v) if v else None

    geometry = path("geometry")
    if geometry is None:
        raise ConfigError(f"city {name}: missing geometry path")
    id_property = keys.get("id_property", "GEOID")
    columns = {k[len("columns."):]: v for k, v in keys.items() if k.startswith("columns.")}
    api = None
    if "api.endpoint" in keys:
        variables = {k[len("api.variables."):]: v for k, v in keys.items() if k.startswith("api.variables.")}
        if not variables:
            raise ConfigError(f"city {name}: api.variables.* entries required")
        if "api.state" not in keys or "api.county" not in keys:
            raise ConfigError(f"city {name}: api.state and api.county required")
        api = ApiSelector(
            ApiConfig(
                endpoint=keys["api.endpoint"],
                key=keys.get("api.key") or None,
                cache_dir=cache_dir,
                max_retries=_num("api.max_retries", keys.get("api.max_retries", "3"), int),
                max_concurrency=_num("api.max_concurrency", keys.get("api.max_concurrency", "4"), int),
            ),
            variables,
            (Geography(keys["api.state"], keys["api.county"], _list(keys.get("api.tracts", ""))),),
        )
    attributes = path("attributes")
    if attributes is None and api is None:
        raise ConfigError(f"city {name}: needs an attributes path or api.* settings")
    known = {"geometry", "attributes", "id_property", "id_column"}
    for k in keys:
        if k not in known and not k.startswith(("columns.", "api.")):
            raise ConfigError(f"city {name}: unknown key {k!r}")
    return CityConfig(
        name=name,
        geometry=geometry,
        attributes=attributes,
        api=api,
        id_property=id_property,
        id_column=keys.get("id_column", id_property),
        columns=columns,
    )


_TOP_LEVEL = {
    "output_dir", "seed", "permutations", "workers", "figures", "cache_dir",
    "weights.scheme", "weights.quantum", "weights.row_standardize", "weights.power",
    "weights.cutoff", "gstar.threshold", "gstar.all_indices", "breaks.k",
    "socio.variables", "socio.log",
}


def load_config(path, env: Mapping[str, str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_text(text, base=path.parent, env=env)


def config_from_text(text: str, base: Path = Path("."), env: Mapping[str, str] | None = None) -> PipelineConfig:
    env = os.environ if env is None else env
    kv = parse_assignments(text)
    city_keys: dict[str, dict[str, str]] = {}
    for key, value in kv.items():
        if key.startswith("city."):
            try:
                _, name, rest = key.split(".", 2)
            except ValueError:
                raise ConfigError(f"bad city key {key!r}") from None
            city_keys.setdefault(name, {})[rest] = value
        elif key not in _TOP_LEVEL:
            raise ConfigError(f"unknown key {key!r}")

    cache_dir = None
    if env.get(CACHE_ENV):
        cache_dir = Path(env[CACHE_ENV])
    elif kv.get("cache_dir"):
        cache_dir = base / kv["cache_dir"]

    cities = tuple(_city(name, keys, base, cache_dir) for name, keys in city_keys.items())
    cutoff = kv.get("weights.cutoff")
    scheme = kv.get("weights.scheme", "queen").lower()
    return PipelineConfig(
        cities=cities,
        output_dir=base / kv.get("output_dir", "reports"),
        scheme=scheme,
        quantum=_num("weights.quantum", kv.get("weights.quantum", "1e-7")),
        row_standardize=_bool("weights.row_standardize", kv.get("weights.row_standardize", "false")),
        power=_num("weights.power", kv.get("weights.power", "1")),
        cutoff=_num("weights.cutoff", cutoff) if cutoff else None,
        gstar_threshold=_num("gstar.threshold", kv.get("gstar.threshold", "1.96")),
        gstar_all_indices=_bool("gstar.all_indices", kv.get("gstar.all_indices", "false")),
        permutations=_num("permutations", kv.get("permutations", "999"), int),
        seed=_num("seed", kv.get("seed", "42"), int),
        breaks_k=_num("breaks.k", kv.get("breaks.k", "5"), int),
        socio=_list(kv["socio.variables"]) if "socio.variables" in kv else DEFAULT_SOCIO,
        log_transform=_log_spec(kv["socio.log"]) if "socio.log" in kv else DEFAULT_LOG,
        cache_dir=cache_dir,
        figures=_bool("figures", kv.get("figures", "false")),
        workers=_num("workers", kv.get("workers", "1"), int),
    )
