"""Lagrangian foliation from a Poisson-commuting family.

The distribution E_p is spanned by the Hamiltonian fields of the family at p.
Leaves are traced by composing the flows of n spanning fields,
``Phi(t) = phi^1_{t_1} o ... o phi^n_{t_n}(p)``, each flow integrated with
classical constant-step RK4.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsl import Symbol, SymbolFamily
from .symplectic import (
    DEFAULT_FD_STEP,
    SymplecticChart,
    _dual,
    hamiltonian_field,
    lie_bracket,
    omega,
    poisson_bracket,
)

__all__ = [
    "DistributionFrame",
    "FamilyTooSmallError",
    "FlowEscapeError",
    "LeafEscapedError",
    "LeafTrace",
    "PreconditionError",
    "SingularSetEstimate",
    "distribution_frame",
    "flow_commutation_residual",
    "involutivity_residual",
    "isotropy_residual",
    "lagrangian_residual",
    "lattice_points",
    "leafwise_constancy",
    "prop_abelian_check",
    "richness_scan",
    "trace_leaf",
]

DEFAULT_TAU_RANK = 1e-8


class FamilyTooSmallError(ValueError):
    pass


class FlowEscapeError(RuntimeError):
    pass


class LeafEscapedError(RuntimeError):
    pass


class PreconditionError(ValueError):
    """The submersion does not define a Lagrangian foliation; carries the witness."""

    def __init__(self, pair, witness, point):
        self.pair = pair
        self.witness = witness
        self.point = point
        super().__init__(
            f"precondition violated: {{{pair[0]}, {pair[1]}}} = {witness:.6g} at {np.round(point, 12).tolist()}"
            " (level sets are not Lagrangian)"
        )


def _fields(chart, symbols, p):
    """Stack of Hamiltonian fields, shape p.shape[:-1] + (2n, len(symbols)); no region check."""
    return np.stack([_dual(chart, p, s.gradient(p)) for s in symbols], axis=-1)


def _subsets(m, n):
    if m < n:
        raise FamilyTooSmallError(f"family has {m} member(s), at least n = {n} are needed")
    return list(itertools.combinations(range(m), n))


def _best_subfamily(chart, family, p):
    """(sigma_n, subset) maximizing the n-th singular value of the frame; batched over p."""
    fields = _fields(chart, family.members, p)
    best_sigma = None
    best_idx = None
    subsets = _subsets(len(family), chart.n)
    for k, sub in enumerate(subsets):
        sv = np.linalg.svd(fields[..., list(sub)], compute_uv=False)
        sigma = sv[..., chart.n - 1]
        if best_sigma is None:
            best_sigma = sigma
            best_idx = np.zeros(np.shape(sigma), dtype=int)
        else:
            better = sigma > best_sigma
            best_sigma = np.where(better, sigma, best_sigma)
            best_idx = np.where(better, k, best_idx)
    return best_sigma, best_idx, subsets


@dataclass(frozen=True)
class DistributionFrame:
    """Columns are the Hamiltonian fields of ``members`` (indices into the family) at ``base``."""

    base: np.ndarray
    frame: np.ndarray
    members: tuple
    singular_values: np.ndarray

    @property
    def sigma_n(self):
        return float(self.singular_values[-1])


def distribution_frame(chart, family: SymbolFamily, p) -> DistributionFrame:
    p = chart.check_point(p)
    _, idx, subsets = _best_subfamily(chart, family, p)
    sub = subsets[int(idx)]
    frame = np.stack([hamiltonian_field(chart, family[i], p) for i in sub], axis=-1)
    return DistributionFrame(p.copy(), frame, sub, np.linalg.svd(frame, compute_uv=False))


def lattice_points(chart: SymplecticChart, cells: int):
    """Corner nodes of a ``cells``^{2n} lattice over the region's bounding box.

    Returns ``(nodes, inside)`` where ``nodes`` has shape (cells+1,)*2n + (2n,).
    """
    lo, hi = chart.bounds()
    axis = np.linspace(lo, hi, cells + 1)
    mesh = np.meshgrid(*([axis] * chart.ambient_dim), indexing="ij")
    nodes = np.stack(mesh, axis=-1)
    return nodes, chart.contains(nodes)


@dataclass
class SingularSetEstimate:
    """Sampled estimate of the set where the family's differentials drop rank.

    ``singular_nodes`` are lattice nodes with sigma_n < tau_rank; ``singular_cells``
    are the lattice cells having such a node as a corner.
    """

    tau_rank: float
    cells: int
    singular_nodes: np.ndarray
    singular_node_index: list
    singular_cells: list
    covering_fraction: float
    n_regular: int
    n_nodes: int
    min_regular_sigma: float

    @property
    def empty(self):
        return len(self.singular_nodes) == 0

    def recheck(self, chart, family):
        """sigma_n at each reported singular node (all should be < tau_rank)."""
        if self.empty:
            return np.zeros(0)
        sigma, _, _ = _best_subfamily(chart, family, self.singular_nodes)
        return sigma

    def to_dict(self):
        return {
            "tau_rank": self.tau_rank,
            "cells_per_axis": self.cells,
            "singular_nodes": np.round(self.singular_nodes, 15).tolist(),
            "singular_cells": [list(c) for c in self.singular_cells],
            "covering_fraction": self.covering_fraction,
            "n_regular": self.n_regular,
            "n_nodes": self.n_nodes,
            "min_regular_sigma": self.min_regular_sigma,
        }


def richness_scan(chart, family: SymbolFamily, cells: int = 64, tau_rank: float = DEFAULT_TAU_RANK):
    """Classify lattice nodes as regular (sigma_n >= tau_rank) or singular."""
    _subsets(len(family), chart.n)
    nodes, inside = lattice_points(chart, cells)
    pts = nodes[inside]
    sigma, _, _ = _best_subfamily(chart, family, pts)
    singular = ~(sigma >= tau_rank)  # NaN counts as singular
    node_index = np.argwhere(inside)[singular]
    singular_cells = set()
    d = chart.ambient_dim
    for idx in node_index:
        for offs in itertools.product((0, 1), repeat=d):
            cell = tuple(int(i) - o for i, o in zip(idx, offs))
            if all(0 <= c < cells for c in cell):
                singular_cells.add(cell)
    # cells with at least one corner inside the region
    in_cells = np.zeros((cells,) * d, dtype=bool)
    for offs in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(o, o + cells) for o in offs)
        in_cells |= inside[sl]
    n_cells = int(in_cells.sum())
    regular_sigma = sigma[~singular]
    return SingularSetEstimate(
        tau_rank=tau_rank,
        cells=cells,
        singular_nodes=pts[singular],
        singular_node_index=[tuple(int(i) for i in idx) for idx in node_index],
        singular_cells=sorted(singular_cells),
        covering_fraction=len(singular_cells) / n_cells if n_cells else 0.0,
        n_regular=int((~singular).sum()),
        n_nodes=int(len(pts)),
        min_regular_sigma=float(regular_sigma.min()) if regular_sigma.size else 0.0,
    )


def isotropy_residual(chart, family: SymbolFamily, p) -> float:
    """max_{i<j} |omega_p(X_{a_i}, X_{a_j})|; zero for a single generator."""
    p = chart.check_point(p)
    xs = [hamiltonian_field(chart, a, p) for a in family]
    worst = 0.0
    for i, j in itertools.combinations(range(len(xs)), 2):
        worst = max(worst, float(np.max(np.abs(omega(chart, p, xs[i], xs[j])))))
    return worst


def involutivity_residual(chart, family: SymbolFamily, p, fd_step: float = DEFAULT_FD_STEP) -> float:
    """Largest distance from a pairwise Lie bracket of family fields to span E_p."""
    p = chart.check_point(p, margin=fd_step)
    if len(family) < 2:
        return 0.0
    frame = distribution_frame(chart, family, p).frame
    q, _ = np.linalg.qr(frame)
    worst = 0.0
    for i, j in itertools.combinations(range(len(family)), 2):
        fi, fj = family[i], family[j]
        v = lie_bracket(
            lambda x: hamiltonian_field(chart, fi, x),
            lambda x: hamiltonian_field(chart, fj, x),
            p,
            fd_step,
        )
        worst = max(worst, float(np.linalg.norm(v - q @ (q.T @ v))))
    return worst


# ---------------------------------------------------------------- flows


def _rk4_flow(chart, symbol, pts, duration, rk4_step, active):
    """Integrate X_symbol for ``duration`` from each active point.

    Points that leave the region are set to NaN and deactivated.
    """
    if duration == 0:
        return pts, active
    steps = max(1, math.ceil(abs(duration) / rk4_step - 1e-9))
    h = duration / steps
    pts = pts.copy()
    active = active.copy()

    def f(q):
        return _dual(chart, q, symbol.gradient(q))

    for _ in range(steps):
        if not active.any():
            break
        y = pts[active]
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ok = chart.contains(y) & np.all(np.isfinite(y), axis=-1)
        y[~ok] = np.nan
        pts[active] = y
        idx = np.flatnonzero(active)
        active[idx[~ok]] = False
    return pts, active


def flow(chart, symbol: Symbol, p, duration: float, rk4_step: float = 1e-3):
    """phi_duration(p) for the Hamiltonian flow of ``symbol``; raises if it escapes."""
    p = chart.check_point(p)
    pts, active = _rk4_flow(chart, symbol, p[None, :], duration, rk4_step, np.array([True]))
    if not active[0]:
        raise FlowEscapeError(f"flow of {symbol.label!r} leaves the chart region within time {duration}")
    return pts[0]


def flow_commutation_residual(chart, family, p, i, j, s, t, rk4_step=1e-3) -> float:
    """||phi^i_s(phi^j_t(p)) - phi^j_t(phi^i_s(p))||."""
    a, b = family[i], family[j]
    one = flow(chart, a, flow(chart, b, p, t, rk4_step), s, rk4_step)
    two = flow(chart, b, flow(chart, a, p, s, rk4_step), t, rk4_step)
    return float(np.linalg.norm(one - two))


@dataclass
class LeafTrace:
    """Lattice of points on one leaf.

    ``points[k_1, ..., k_n]`` is ``Phi(t)`` with ``t_i = ts[k_i]``; escaped nodes hold NaN
    and are flagged in ``escaped``.  ``generators`` are the family indices whose
    flows parametrize the leaf, ``generators[i]`` driving lattice axis i.
    """

    base: np.ndarray
    ts: np.ndarray
    dt: float
    rk4_step: float
    points: np.ndarray
    escaped: np.ndarray
    generators: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.escaped.ndim

    @property
    def center(self):
        return (len(self.ts) // 2,) * self.n

    def valid_points(self):
        return self.points[~self.escaped]

    def write_csv(self, path):
        """Columns t_1..t_n, x_1, y_1, ..., x_n, y_n, escaped; one row per lattice node."""
        n = self.n
        header = [f"t_{i + 1}" for i in range(n)] + [f"{c}_{i + 1}" for i in range(n) for c in "xy"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header + ["escaped"])
            for idx in np.ndindex(*self.escaped.shape):
                t = [repr(float(self.ts[k])) for k in idx]
                if self.escaped[idx]:
                    xy = [""] * (2 * n)
                else:
                    xy = [repr(float(v)) for v in self.points[idx]]
                w.writerow(t + xy + [int(self.escaped[idx])])


def trace_leaf(chart, family: SymbolFamily, p, T: float, dt: float, rk4_step: float = 1e-3, diagnostics=True):
    """Trace the leaf through ``p`` on the lattice ``[-T, T]^n`` with spacing ``dt``."""
    if rk4_step > dt:
        raise ValueError(f"rk4_step {rk4_step} exceeds lattice spacing {dt}")
    p = chart.check_point(p)
    n = chart.n
    sigma, idx, subsets = _best_subfamily(chart, family, p)
    gens = subsets[int(idx)]
    k = int(round(T / dt))
    ts = dt * np.arange(-k, k + 1)
    m = 2 * k + 1

    pts = np.broadcast_to(p, (m,) * n + (2 * n,)).copy()
    active = np.ones((m,) * n, dtype=bool)
    # apply phi^n first, phi^1 last
    for axis in reversed(range(n)):
        sym = family[gens[axis]]
        # move the origin slice of this axis along the flow, one dt at a time in both directions
        center = [slice(None)] * n
        center[axis] = k
        for direction in (1, -1):
            cur = pts[tuple(center)].copy()
            cur_active = active[tuple(center)].copy()
            for step in range(1, k + 1):
                cur, cur_active = _rk4_flow(chart, sym, cur.reshape(-1, 2 * n), direction * dt, rk4_step, cur_active.reshape(-1))
                shape = [m] * n
                del shape[axis]
                cur = cur.reshape(*shape, 2 * n)
                cur_active = cur_active.reshape(shape)
                sl = list(center)
                sl[axis] = k + direction * step
                pts[tuple(sl)] = cur
                active[tuple(sl)] = cur_active
    escaped = ~active
    if not active.any() or escaped.sum() == escaped.size - 1:
        raise LeafEscapedError("every lattice node except the base point escapes the chart region")
    leaf = LeafTrace(p.copy(), ts, dt, rk4_step, pts, escaped, gens)
    if diagnostics:
        sub = SymbolFamily(tuple(family[i] for i in gens))
        leaf.diagnostics = {
            "constancy": leafwise_constancy(leaf, family),
            "isotropy": _leaf_isotropy(chart, family, leaf),
            "lagrangian": lagrangian_residual(chart, leaf),
            "flow_commutation": _leaf_flow_commutation(chart, sub, p, dt, rk4_step),
            "reversibility": reversibility_residual(chart, family, leaf),
            "escaped_nodes": int(escaped.sum()),
            "nodes": int(escaped.size),
            "sigma_n": float(sigma),
        }
    return leaf


def _leaf_isotropy(chart, family, leaf):
    pts = leaf.valid_points()
    if len(family) < 2:
        return 0.0
    xs = _fields(chart, family.members, pts)
    worst = 0.0
    for i, j in itertools.combinations(range(len(family)), 2):
        worst = max(worst, float(np.max(np.abs(omega(chart, pts, xs[..., i], xs[..., j])))))
    return worst


def _leaf_flow_commutation(chart, sub, p, dt, rk4_step):
    worst = 0.0
    for i, j in itertools.combinations(range(len(sub)), 2):
        try:
            worst = max(worst, flow_commutation_residual(chart, sub, p, i, j, dt, dt, rk4_step))
        except FlowEscapeError:
            continue
    return worst


def reversibility_residual(chart, family, leaf: LeafTrace) -> float:
    """Max distance between phi^1_{-dt}(Phi(t)) and Phi(t - dt e_1) over valid node pairs."""
    sym = family[leaf.generators[0]]
    src = leaf.points[1:]
    dst = leaf.points[:-1]
    ok = ~leaf.escaped[1:] & ~leaf.escaped[:-1]
    if not ok.any():
        return 0.0
    back, active = _rk4_flow(chart, sym, src[ok], -leaf.dt, leaf.rk4_step, np.ones(int(ok.sum()), dtype=bool))
    diff = np.linalg.norm(back[active] - dst[ok][active], axis=-1)
    return float(diff.max()) if diff.size else 0.0


def leafwise_constancy(leaf: LeafTrace, symbols) -> float:
    """max over symbols and non-escaped nodes of |a(point) - a(base)|."""
    pts = leaf.valid_points()
    worst = 0.0
    for a in symbols:
        worst = max(worst, float(np.max(np.abs(a(pts) - a(leaf.base)))))
    return worst


def lagrangian_residual(chart, leaf: LeafTrace) -> float:
    """Normalized |omega(D_i Phi, D_j Phi)| over interior lattice nodes; 0 for n = 1."""
    n = leaf.n
    if n == 1:
        return 0.0
    m = len(leaf.ts)
    if m < 3:
        raise ValueError("lagrangian_residual needs at least 3 lattice nodes per axis")
    inner = (slice(1, -1),) * n
    diffs = []
    ok = ~leaf.escaped[inner]
    for axis in range(n):
        plus = [slice(1, -1)] * n
        minus = [slice(1, -1)] * n
        plus[axis] = slice(2, None)
        minus[axis] = slice(None, -2)
        diffs.append(leaf.points[tuple(plus)] - leaf.points[tuple(minus)])
        ok &= ~leaf.escaped[tuple(plus)] & ~leaf.escaped[tuple(minus)]
    base = leaf.points[inner][ok]
    if base.size == 0:
        return 0.0
    worst = 0.0
    for i, j in itertools.combinations(range(n), 2):
        u, v = diffs[i][ok], diffs[j][ok]
        nu, nv = np.linalg.norm(u, axis=-1), np.linalg.norm(v, axis=-1)
        if np.any(nu < 1e-12) or np.any(nv < 1e-12):
            warnings.warn("degenerate leaf tangent: lattice difference below 1e-12", RuntimeWarning, stacklevel=2)
            good = (nu >= 1e-12) & (nv >= 1e-12)
            u, v, nu, nv, pts = u[good], v[good], nu[good], nv[good], base[good]
        else:
            pts = base
        if len(pts):
            worst = max(worst, float(np.max(np.abs(omega(chart, pts, u, v)) / (nu * nv))))
    return worst


def prop_abelian_check(chart, submersion: SymbolFamily, pairs, grid, tau: float = 1e-10) -> float:
    """max |{a, b}| over ``grid`` for leafwise-constant pairs built from ``submersion``.

    The level sets of ``submersion`` must form a Lagrangian foliation; this is checked
    first (pairwise brackets of the components) and :class:`PreconditionError` is raised
    with the offending pair otherwise.
    """
    grid = chart.check_point(np.atleast_2d(np.asarray(grid, dtype=float)))
    if len(submersion) != chart.n:
        raise FamilyTooSmallError(f"a submersion needs exactly n = {chart.n} components, got {len(submersion)}")
    for i, j in itertools.combinations(range(len(submersion)), 2):
        vals = poisson_bracket(chart, submersion[i], submersion[j], grid)
        k = int(np.argmax(np.abs(vals)))
        if abs(vals[k]) > tau:
            raise PreconditionError((submersion.names[i], submersion.names[j]), float(vals[k]), grid[k])
    worst = 0.0
    for a, b in pairs:
        worst = max(worst, float(np.max(np.abs(poisson_bracket(chart, a, b, grid)))))
    return worst
