"""Run configuration: a single JSON document validated before any computation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .bergman import NRule
from .dsl import DslError, SymbolFamily
from .symplectic import SymplecticChart

DEFAULT_CELLS = {1: 64, 2: 6, 3: 2}
DEFAULT_BRACKET_CELLS = {1: 16, 2: 6, 3: 2}


class ConfigError(ValueError):
    pass


@dataclass
class Tolerances:
    tau_rank: float = 1e-8
    tau_comm: float = 1e-9
    tau_isotropy: float = 1e-10
    tau_involutivity: float = 1e-5
    tau_constancy: float = 1e-8
    tau_lagrangian: float = 1e-4
    tau_jacobi: float = 1e-5
    tau_field_bracket: float = 1e-5
    noise_floor: float = 1e-10
    max_singular_fraction: float = 0.1


@dataclass
class LeafGrid:
    T: float = 1.0
    dt: float = 0.05
    base_points: list | None = None


@dataclass
class RunConfig:
    chart: SymplecticChart
    symbols: dict
    family: SymbolFamily
    tol: Tolerances = field(default_factory=Tolerances)
    richness_cells: int = 64
    bracket_cells: int = 16
    leaf: LeafGrid = field(default_factory=LeafGrid)
    fd_step: float = 1e-4
    rk4_step: float = 1e-3
    h_list: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    N: int | None = None
    N_rule: NRule = field(default_factory=NRule)
    slope_band: tuple = (0.8, 1.2)
    dump_matrices: bool = False
    output: str = "out"

    @property
    def truncation(self):
        return self.N if self.N is not None else self.N_rule

    def echo(self):
        """Normalized config for the report (output directory excluded)."""
        return {
            "chart": self.chart.to_dict(),
            "symbols": dict(self.symbols),
            "grids": {
                "richness_cells": self.richness_cells,
                "bracket_cells": self.bracket_cells,
                "leaf": {"T": self.leaf.T, "dt": self.leaf.dt, "base_points": self.leaf.base_points},
            },
            "numeric": {
                **asdict(self.tol),
                "fd_step": self.fd_step,
                "rk4_step": self.rk4_step,
                "h_list": list(self.h_list),
                "N": self.N,
                "N_rule": {"scale": self.N_rule.scale, "cap": self.N_rule.cap},
                "slope_band": list(self.slope_band),
            },
            "dump_matrices": self.dump_matrices,
        }


def _positive(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigError(f"{name} must be a positive number, got {value!r}")
    return value


def _posint(name, value):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


def _known(section, d, keys):
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be an object")
    extra = set(d) - set(keys)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


def parse_config(doc: dict) -> RunConfig:
    _known("config", doc, {"chart", "symbols", "grids", "numeric", "output", "dump_matrices"})
    if "chart" not in doc or "symbols" not in doc:
        raise ConfigError("config needs 'chart' and 'symbols'")

    c = doc["chart"]
    _known("chart", c, {"n", "region", "radius", "lo", "hi", "form", "c"})
    n = _posint("chart.n", c.get("n", 1))
    try:
        chart = SymplecticChart(
            n=n,
            region=c.get("region", "box"),
            lo=float(c.get("lo", -1.0)),
            hi=float(c.get("hi", 1.0)),
            radius=float(c.get("radius", 0.99)),
            form=c.get("form", "standard"),
            c=float(c.get("c", 2.0)),
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid chart: {err}") from err

    symbols = doc["symbols"]
    if isinstance(symbols, list):
        symbols = {str(e): e for e in symbols}
    if not isinstance(symbols, dict) or not symbols:
        raise ConfigError("symbols must be a nonempty object of name -> expression")
    for name, expr in symbols.items():
        if not isinstance(expr, str):
            raise ConfigError(f"symbol {name!r} must be an expression string")
    try:
        family = SymbolFamily.parse(symbols, n)
    except DslError as err:
        raise ConfigError(f"invalid symbol expression: {err}") from err

    numeric = doc.get("numeric", {})
    tol_keys = set(Tolerances.__dataclass_fields__)
    _known("numeric", numeric, tol_keys | {"fd_step", "rk4_step", "h_list", "N", "N_rule", "slope_band"})
    tol = Tolerances(**{k: _positive(f"numeric.{k}", numeric[k]) for k in tol_keys if k in numeric})
    h_list = numeric.get("h_list", [0.4, 0.2, 0.1, 0.05])
    if not isinstance(h_list, list) or not h_list:
        raise ConfigError("numeric.h_list must be a nonempty list")
    for h in h_list:
        if isinstance(h, bool) or not isinstance(h, (int, float)) or not 0 < h < 1:
            raise ConfigError(f"numeric.h_list entries must lie in (0, 1), got {h!r}")
    N = numeric.get("N")
    if N is not None:
        _posint("numeric.N", N)
    rule = numeric.get("N_rule", {})
    _known("numeric.N_rule", rule, {"scale", "cap"})
    N_rule = NRule(float(_positive("N_rule.scale", rule.get("scale", 8.0))), _posint("N_rule.cap", rule.get("cap", 160)))
    band = numeric.get("slope_band", [0.8, 1.2])
    if not (isinstance(band, list) and len(band) == 2 and all(isinstance(b, (int, float)) for b in band) and band[0] < band[1]):
        raise ConfigError(f"numeric.slope_band must be [low, high], got {band!r}")

    grids = doc.get("grids", {})
    _known("grids", grids, {"richness_cells", "bracket_cells", "leaf"})
    leaf = grids.get("leaf", {})
    _known("grids.leaf", leaf, {"T", "dt", "base_points"})
    base_points = leaf.get("base_points")
    if base_points is not None:
        if not isinstance(base_points, list) or not all(
            isinstance(p, list) and len(p) == 2 * n and all(isinstance(v, (int, float)) for v in p) for p in base_points
        ):
            raise ConfigError(f"grids.leaf.base_points must be a list of {2 * n}-vectors")
        for p in base_points:
            if not chart.contains(p):
                raise ConfigError(f"leaf base point {p} lies outside the chart region")
    leaf_grid = LeafGrid(
        T=float(_positive("grids.leaf.T", leaf.get("T", 1.0))),
        dt=float(_positive("grids.leaf.dt", leaf.get("dt", 0.05))),
        base_points=base_points,
    )
    rk4_step = float(_positive("numeric.rk4_step", numeric.get("rk4_step", 1e-3)))
    if rk4_step > leaf_grid.dt:
        raise ConfigError("numeric.rk4_step must not exceed grids.leaf.dt")

    output = doc.get("output", "out")
    if not isinstance(output, str):
        raise ConfigError("output must be a directory path")
    return RunConfig(
        chart=chart,
        symbols=dict(symbols),
        family=family,
        tol=tol,
        richness_cells=_posint("grids.richness_cells", grids.get("richness_cells", DEFAULT_CELLS.get(n, 2))),
        bracket_cells=_posint("grids.bracket_cells", grids.get("bracket_cells", DEFAULT_BRACKET_CELLS.get(n, 2))),
        leaf=leaf_grid,
        fd_step=float(_positive("numeric.fd_step", numeric.get("fd_step", 1e-4))),
        rk4_step=rk4_step,
        h_list=[float(h) for h in h_list],
        N=N,
        N_rule=N_rule,
        slope_band=(float(band[0]), float(band[1])),
        dump_matrices=bool(doc.get("dump_matrices", False)),
        output=output,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(doc)
