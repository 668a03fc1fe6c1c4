"""Subcommand drivers and report assembly.

Every driver returns a :class:`Report`.  A stage verdict is PASS exactly when all
of its checks pass, and a check records the value, the tolerance (or band) it
was held to and, for grid maxima, the arg-max location.
"""

from __future__ import annotations

import datetime as _dt
import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bergman import commutativity_matrix, correspondence_scan, toeplitz_matrix, BergmanSpace
from .config import RunConfig
from .foliation import (
    _best_subfamily,
    _fields,
    involutivity_residual,
    lattice_points,
    richness_scan,
    trace_leaf,
    LeafEscapedError,
)
from .symplectic import field_bracket_residual, jacobi_residual, omega, poisson_bracket

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


def _point(p):
    return [float(v) for v in np.round(np.asarray(p, dtype=float), 15)]


def check(name, value, tolerance=None, band=None, argmax=None, **extra):
    value = None if value is None else float(value)
    if value is None:
        passed = False
    elif band is not None:
        passed = band[0] <= value <= band[1]
    else:
        passed = value <= tolerance
    out = {"name": name, "value": value}
    if band is not None:
        out["band"] = [float(band[0]), float(band[1])]
    else:
        out["tolerance"] = float(tolerance)
    if argmax is not None:
        out["argmax"] = _point(argmax)
    out.update(extra)
    out["passed"] = bool(passed)
    return out


@dataclass
class Stage:
    name: str
    checks: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    witness: dict | None = None
    skipped: bool = False
    data: dict = field(default_factory=dict)

    @property
    def verdict(self):
        if self.skipped:
            return SKIPPED
        return PASS if all(c["passed"] for c in self.checks) else FAIL

    def to_dict(self):
        d = {"verdict": self.verdict, "checks": self.checks}
        if self.notices:
            d["notices"] = self.notices
        if self.witness is not None:
            d["witness"] = self.witness
        return d


@dataclass
class Report:
    command: str
    config: dict
    stages: list = field(default_factory=list)
    files: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def first_failure(self):
        for s in self.stages:
            if s.verdict == FAIL:
                return s
        return None

    @property
    def exit_code(self):
        return 1 if self.first_failure is not None else 0

    def to_dict(self, out_dir=None):
        """JSON-ready report; everything outside ``metadata`` is deterministic."""
        ff = self.first_failure
        return {
            "command": self.command,
            "status": FAIL if ff else PASS,
            "exit_code": self.exit_code,
            "first_failure": None if ff is None else {"stage": ff.name, "witness": ff.witness},
            "stages": {s.name: s.to_dict() for s in self.stages},
            "data": self.data,
            "files": list(self.files),
            "config": self.config,
            "metadata": {
                "toolkit_version": __version__,
                "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                "output_dir": None if out_dir is None else os.path.abspath(out_dir),
            },
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(out_dir), fh, indent=2, allow_nan=True)
            fh.write("\n")
        return path


# ---------------------------------------------------------------- grids


def bracket_grid(cfg: RunConfig):
    """Interior lattice points kept at least ``fd_step`` away from the boundary."""
    nodes, _ = lattice_points(cfg.chart, cfg.bracket_cells)
    pts = nodes.reshape(-1, cfg.chart.ambient_dim)
    return pts[cfg.chart.contains(pts, margin=cfg.fd_step)]


def spot_points(cfg: RunConfig, k=5):
    """A few deterministic points away from the boundary for finite-difference checks."""
    lo, hi = cfg.chart.bounds()
    margin = 0.25 * (hi - lo) / 2
    pts = bracket_grid(cfg)
    pts = pts[cfg.chart.contains(pts, margin=margin)]
    if len(pts) == 0:
        return pts
    idx = np.linspace(0, len(pts) - 1, min(k, len(pts))).round().astype(int)
    return pts[np.unique(idx)]


def default_base_points(cfg: RunConfig):
    lo, hi = cfg.chart.bounds()
    p = np.zeros(cfg.chart.ambient_dim)
    p[0::2] = 0.5 * (lo + hi) + 0.25 * (hi - lo)
    if cfg.chart.region == "disk":
        p[0] = 0.5 * cfg.chart.radius
    return [p.tolist()]


# ---------------------------------------------------------------- stages


def poisson_stage(cfg: RunConfig) -> Stage:
    st = Stage("poisson_commutativity")
    fam = cfg.family
    pts = bracket_grid(cfg)
    worst, where, pair = 0.0, pts[0], None
    for i, j in itertools.combinations(range(len(fam)), 2):
        vals = np.abs(poisson_bracket(cfg.chart, fam[i], fam[j], pts))
        k = int(np.argmax(vals))
        if pair is None or vals[k] > worst:
            worst, where, pair = float(vals[k]), pts[k], (i, j)
    st.checks.append(check("max_pairwise_bracket", worst, cfg.tol.tau_comm, argmax=where, grid_points=int(len(pts))))
    if pair is not None and worst > cfg.tol.tau_comm:
        st.witness = {"pair": [fam.names[pair[0]], fam.names[pair[1]]], "value": worst, "point": _point(where)}
    if len(fam) == 1:
        st.notices.append("single-member family: Poisson commutativity holds trivially")
    return st


def lie_identity_stage(cfg: RunConfig) -> Stage:
    st = Stage("lie_identities")
    fam = cfg.family
    pts = spot_points(cfg)
    m = len(fam)
    triple = [fam[i % m] for i in range(3)]
    jac, jac_at = 0.0, pts[0]
    fb, fb_at = 0.0, pts[0]
    for p in pts:
        r = jacobi_residual(cfg.chart, *triple, p, cfg.fd_step)
        if r >= jac:
            jac, jac_at = r, p
        for i, j in itertools.combinations_with_replacement(range(m), 2):
            r = field_bracket_residual(cfg.chart, fam[i], fam[j], p, cfg.fd_step)
            if r >= fb:
                fb, fb_at = r, p
    st.checks.append(check("jacobi_residual", jac, cfg.tol.tau_jacobi, argmax=jac_at))
    st.checks.append(check("field_bracket_residual", fb, cfg.tol.tau_field_bracket, argmax=fb_at))
    return st


def _degenerate(cfg, pts):
    grads = np.stack([a.gradient(pts).reshape(-1) for a in cfg.family])
    s = np.linalg.svd(grads, compute_uv=False)
    return int(np.sum(s > s[0] * 1e-10)) < len(cfg.family) if s[0] > 0 else True


def richness_stage(cfg: RunConfig):
    st = Stage("richness")
    chart, fam = cfg.chart, cfg.family
    if len(fam) < chart.n:
        st.checks.append(check("family_size_deficit", chart.n - len(fam), 0))
        st.witness = {"family_size": len(fam), "required": chart.n}
        return st, None
    est = richness_scan(chart, fam, cfg.richness_cells, cfg.tol.tau_rank)
    st.checks.append(check("singular_covering_fraction", est.covering_fraction, cfg.tol.max_singular_fraction))
    if est.covering_fraction > cfg.tol.max_singular_fraction:
        st.witness = {"covering_fraction": est.covering_fraction, "singular_node": _point(est.singular_nodes[0])}
    if est.n_regular == 0:
        st.checks.append(check("regular_nodes_missing", 1, 0))
        st.witness = {"reason": "no regular lattice node"}
    nodes, inside = lattice_points(chart, cfg.richness_cells)
    if len(fam) > 1 and _degenerate(cfg, nodes[inside]):
        st.notices.append("degenerate family: member differentials are linearly dependent over R")
    return st, est


def foliation_stage(cfg: RunConfig, est, out_dir=None, files=None) -> Stage:
    st = Stage("foliation")
    chart, fam = cfg.chart, cfg.family
    if est is None or est.n_regular == 0:
        st.skipped = True
        st.notices.append("skipped: no regular points")
        return st
    nodes, inside = lattice_points(chart, cfg.richness_cells)
    pts = nodes[inside]
    sigma, _, _ = _best_subfamily(chart, fam, pts)
    regular = pts[sigma >= cfg.tol.tau_rank]

    iso, iso_at = 0.0, regular[0]
    if len(fam) > 1:
        xs = _fields(chart, fam.members, regular)
        for i, j in itertools.combinations(range(len(fam)), 2):
            vals = np.abs(omega(chart, regular, xs[..., i], xs[..., j]))
            k = int(np.argmax(vals))
            if vals[k] > iso:
                iso, iso_at = float(vals[k]), regular[k]
    st.checks.append(check("isotropy_residual", iso, cfg.tol.tau_isotropy, argmax=iso_at))

    inv, inv_at = 0.0, None
    for p in spot_points(cfg):
        if _best_subfamily(chart, fam, p)[0] < cfg.tol.tau_rank:
            continue
        r = involutivity_residual(chart, fam, p, cfg.fd_step)
        if inv_at is None or r > inv:
            inv, inv_at = r, p
    st.checks.append(check("involutivity_residual", inv, cfg.tol.tau_involutivity, argmax=inv_at))

    leaves = []
    base_points = cfg.leaf.base_points or default_base_points(cfg)
    for idx, p in enumerate(base_points):
        if _best_subfamily(chart, fam, np.asarray(p, float))[0] < cfg.tol.tau_rank:
            st.notices.append(f"leaf base point {p} is singular; not traced")
            continue
        try:
            leaf = trace_leaf(chart, fam, p, cfg.leaf.T, cfg.leaf.dt, cfg.rk4_step)
        except LeafEscapedError as err:
            st.notices.append(f"leaf through {p}: {err}")
            continue
        d = leaf.diagnostics
        entry = {"base_point": _point(p), **{k: (float(v) if isinstance(v, float) else v) for k, v in d.items()}}
        if out_dir is not None:
            name = f"leaf_{idx}.csv"
            leaf.write_csv(os.path.join(out_dir, name))
            files.append(name)
            entry["csv"] = name
        leaves.append(entry)
        st.checks.append(check(f"leaf_{idx}_constancy", d["constancy"], cfg.tol.tau_constancy, argmax=p))
        st.checks.append(check(f"leaf_{idx}_lagrangian", d["lagrangian"], cfg.tol.tau_lagrangian, argmax=p))
    st.data["leaves"] = leaves
    failing = [c for c in st.checks if not c["passed"]]
    if failing:
        st.witness = {"check": failing[0]["name"], "value": failing[0]["value"], "point": failing[0].get("argmax")}
    return st


def operator_stage(cfg: RunConfig, out_dir=None, files=None) -> Stage:
    st = Stage("operator_commutativity")
    if cfg.chart.n != 1:
        st.skipped = True
        st.notices.append(f"skipped: Bergman operators are only available for n = 1 (chart has n = {cfg.chart.n})")
        return st
    res = commutativity_matrix(cfg.family, cfg.h_list, cfg.truncation, cfg.tol.tau_comm)
    worst = res.worst
    value = 0.0 if worst is None else worst["commutator_norm"]
    st.checks.append(check("max_commutator_norm", value, cfg.tol.tau_comm))
    if worst is not None and not res.commutative:
        st.witness = {
            "pair": [res.names[worst["i"]], res.names[worst["j"]]],
            "h": worst["h"],
            "N": worst["N"],
            "commutator_norm": worst["commutator_norm"],
        }
    if len(cfg.family) == 1:
        st.notices.append("single-member family: commutative trivially")
    st.data["per_h"] = {repr(h): v for h, v in res.per_h_max().items()}
    if out_dir is not None:
        res.write_csv(os.path.join(out_dir, "commutators.csv"))
        files.append("commutators.csv")
        if cfg.dump_matrices:
            space = BergmanSpace(cfg.h_list[0], cfg.N if cfg.N is not None else cfg.N_rule(cfg.h_list[0]))
            for i, a in enumerate(cfg.family):
                name = f"toeplitz_{i}.csv"
                toeplitz_matrix(space, a).write_csv(os.path.join(out_dir, name))
                files.append(name)
    return st


# ---------------------------------------------------------------- commands


def run_bracket(cfg: RunConfig, out_dir=None) -> Report:
    rep = Report("bracket", cfg.echo())
    rep.stages = [poisson_stage(cfg), lie_identity_stage(cfg)]
    return rep


def run_foliate(cfg: RunConfig, out_dir=None) -> Report:
    rep = Report("foliate", cfg.echo())
    rich, est = richness_stage(cfg)
    fol = foliation_stage(cfg, est, out_dir, rep.files)
    rep.stages = [rich, fol]
    if est is not None:
        rep.data["singular_set"] = est.to_dict()
    rep.data["leaves"] = fol.data.get("leaves", [])
    return rep


def run_toeplitz(cfg: RunConfig, out_dir=None) -> Report:
    rep = Report("toeplitz", cfg.echo())
    st = operator_stage(cfg, out_dir, rep.files)
    rep.stages = [st]
    rep.data["max_commutator_norm_per_h"] = st.data.get("per_h", {})
    return rep


class CommandError(ValueError):
    """Preconditions of a subcommand unmet by an otherwise valid config."""


def run_berezin_scan(cfg: RunConfig, out_dir=None) -> Report:
    if len(cfg.family) != 2:
        raise CommandError(f"berezin-scan needs exactly two symbols, got {len(cfg.family)}")
    if cfg.chart.n != 1:
        raise CommandError("berezin-scan needs an n = 1 chart")
    a, b = cfg.family
    if cfg.symbols[cfg.family.names[0]] == cfg.symbols[cfg.family.names[1]]:
        b = a
    rep = Report("berezin-scan", cfg.echo())
    bracket_chart = cfg.chart if cfg.chart.form == "bergman-disk" else None
    scan = correspondence_scan(a, b, cfg.h_list, cfg.truncation, bracket_chart, noise_floor=cfg.tol.noise_floor)
    st = Stage("correspondence")
    if scan.bracket_max > cfg.tol.tau_comm:
        if scan.slope is None:
            st.checks.append(check("loglog_slope", None, band=cfg.slope_band))
            st.witness = {"reason": "commutator at noise floor while the Poisson bracket is nonzero"}
        else:
            st.checks.append(check("loglog_slope", scan.slope, band=cfg.slope_band))
            if not st.checks[-1]["passed"]:
                st.witness = {"slope": scan.slope}
    else:
        st.notices.append("Poisson bracket vanishes on the sample grid: checking the noise-floor branch")
        k = int(np.argmax(scan.C))
        st.checks.append(check("max_commutator_norm", scan.C[k], cfg.tol.tau_comm, h=float(scan.h[k])))
        if not st.checks[-1]["passed"]:
            st.witness = {"h": float(scan.h[k]), "commutator_norm": float(scan.C[k])}
    rep.stages = [st]
    rep.data["scan"] = scan.rows
    rep.data["slope"] = scan.slope
    rep.data["bracket_max"] = scan.bracket_max
    if out_dir is not None:
        scan.write_csv(os.path.join(out_dir, "berezin_scan.csv"))
        rep.files.append("berezin_scan.csv")
    return rep


def run_pipeline(cfg: RunConfig, out_dir=None) -> Report:
    """(i) operator commutativity, (ii) richness, (iii) Poisson commutativity, (iv) foliation."""
    rep = Report("pipeline", cfg.echo())
    op = operator_stage(cfg, out_dir, rep.files)
    rich, est = richness_stage(cfg)
    poisson = poisson_stage(cfg)
    fol = foliation_stage(cfg, est, out_dir, rep.files)
    rep.stages = [op, rich, poisson, fol]
    rep.data["max_commutator_norm_per_h"] = op.data.get("per_h", {})
    if est is not None:
        rep.data["singular_set"] = est.to_dict()
    rep.data["leaves"] = fol.data.get("leaves", [])
    return rep


COMMANDS = {
    "bracket": run_bracket,
    "foliate": run_foliate,
    "toeplitz": run_toeplitz,
    "berezin-scan": run_berezin_scan,
    "pipeline": run_pipeline,
}
