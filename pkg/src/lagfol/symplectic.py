"""Symplectic charts, Hamiltonian fields and Poisson brackets.

Matrix convention, used everywhere in the package::

    omega_p(u, v) = u @ Omega(p) @ v

The Hamiltonian field of ``f`` is defined by ``df(v) = omega(X_f, v)`` for all
``v``, i.e. ``Omega(p).T @ X_f = grad f(p)``, and ``{f, g} = df(X_g)``.  On the
standard chart with n = 1 this gives ``X_f = (f_y, -f_x)`` and ``{x1, y1} = +1``.

Points are ``(x1, y1, ..., xn, yn)`` and may carry leading batch axes; the
coordinate axis is last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dsl import DimensionError, Symbol

__all__ = [
    "MarginError",
    "OutsideRegionError",
    "SingularFormError",
    "SymplecticChart",
    "central_gradient",
    "field_bracket_residual",
    "form_matrix",
    "hamiltonian_field",
    "jacobi_residual",
    "lie_bracket",
    "omega",
    "poisson_bracket",
]

DEFAULT_FD_STEP = 1e-4


class OutsideRegionError(ValueError):
    pass


class MarginError(ValueError):
    pass


class SingularFormError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SymplecticChart:
    """A box ``[lo, hi]^{2n}`` or an open disk of radius ``radius`` (n = 1) with a named form.

    ``form`` is ``"standard"`` (constant canonical form pairing x_i with y_i) or
    ``"bergman-disk"`` (``c (1 - |p|^2)^-2 dx^dy``, n = 1 on a disk only).
    """

    n: int = 1
    region: str = "box"
    lo: float = -1.0
    hi: float = 1.0
    radius: float = 0.99
    form: str = "standard"
    c: float = 2.0

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError(f"half-dimension must be positive, got {self.n}")
        if self.region not in ("box", "disk"):
            raise ValueError(f"unknown region {self.region!r}")
        if self.form not in ("standard", "bergman-disk"):
            raise ValueError(f"unknown symplectic form {self.form!r}")
        if self.region == "disk":
            if self.n != 1:
                raise ValueError("disk regions are only available for n = 1")
            if not 0 < self.radius <= 1 or (self.form == "bergman-disk" and self.radius >= 1):
                raise ValueError(f"disk radius must lie in (0, 1), got {self.radius}")
        elif not self.lo < self.hi:
            raise ValueError(f"empty box [{self.lo}, {self.hi}]")
        if self.form == "bergman-disk":
            if self.n != 1 or self.region != "disk":
                raise ValueError("the bergman-disk form requires n = 1 and a disk region")
            if not self.c > 0:
                raise ValueError(f"form constant must be positive, got {self.c}")

    @classmethod
    def standard(cls, n=1, lo=-5.0, hi=5.0):
        return cls(n=n, region="box", lo=lo, hi=hi, form="standard")

    @classmethod
    def bergman_disk(cls, radius=0.99, c=2.0):
        return cls(n=1, region="disk", radius=radius, form="bergman-disk", c=c)

    @property
    def ambient_dim(self) -> int:
        return 2 * self.n

    def contains(self, p, margin=0.0):
        """Boolean (array) telling whether ``p`` lies in the open region shrunk by ``margin``."""
        p = np.asarray(p, dtype=float)
        if self.region == "disk":
            return np.sqrt(np.sum(p**2, axis=-1)) < self.radius - margin
        return np.all((p > self.lo + margin) & (p < self.hi - margin), axis=-1)

    def check_point(self, p, margin=0.0):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise DimensionError(f"point has {p.shape[-1]} coordinates, chart has {self.ambient_dim}")
        inside = self.contains(p, margin)
        if not np.all(inside):
            bad = p[~inside][0] if p.ndim > 1 else p
            if margin and self.contains(bad):
                raise MarginError(f"point {bad.tolist()} is closer than {margin} to the chart boundary")
            raise OutsideRegionError(f"point {bad.tolist()} lies outside the chart region")
        return p

    def bounds(self):
        """Axis-aligned bounding box of the region (lo, hi)."""
        if self.region == "disk":
            return -self.radius, self.radius
        return self.lo, self.hi

    def scale(self, p):
        """Scalar factor s(p) with Omega(p) = s(p) * Omega_0."""
        p = np.asarray(p, dtype=float)
        if self.form == "standard":
            return np.ones(p.shape[:-1]) if p.ndim > 1 else 1.0
        return self.c / (1.0 - np.sum(p**2, axis=-1)) ** 2

    def to_dict(self):
        d = {"n": self.n, "region": self.region, "form": self.form}
        if self.region == "disk":
            d["radius"] = self.radius
        else:
            d.update(lo=self.lo, hi=self.hi)
        if self.form == "bergman-disk":
            d["c"] = self.c
        return d


def canonical_matrix(n):
    """Omega_0: block diagonal with [[0, 1], [-1, 0]] pairing x_i with y_i."""
    return np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def form_matrix(chart: SymplecticChart, p) -> np.ndarray:
    """Antisymmetric matrix of omega at ``p`` (batched over leading axes)."""
    p = chart.check_point(p)
    s = np.asarray(chart.scale(p))
    return s[..., None, None] * canonical_matrix(chart.n)


def omega(chart, p, u, v):
    """omega_p(u, v)."""
    m = form_matrix(chart, p)
    return np.einsum("...i,...ij,...j->...", np.asarray(u, float), m, np.asarray(v, float))


def _dual(chart, p, covector):
    # Solve Omega(p)^T X = covector.  Both forms are a scalar times Omega_0 and
    # Omega_0^{-T} = Omega_0, so X = Omega_0 @ covector / s(p).
    s = np.asarray(chart.scale(p))
    if np.any(~np.isfinite(s)) or np.any(s == 0):
        raise SingularFormError("symplectic form is degenerate at the query point")
    x = np.einsum("ij,...j->...i", canonical_matrix(chart.n), covector)
    return x / s[..., None]


def hamiltonian_field(chart: SymplecticChart, f: Symbol, p) -> np.ndarray:
    """X_f(p): the unique vector with omega(X_f, v) = df(v)."""
    p = chart.check_point(p)
    _check_symbol(chart, f)
    return _dual(chart, p, f.gradient(p))


def hamiltonian_field_solve(chart, f, p):
    """Same as :func:`hamiltonian_field` through a generic linear solve; used as a cross-check."""
    p = chart.check_point(p)
    m = form_matrix(chart, p)
    return np.linalg.solve(np.swapaxes(m, -1, -2), f.gradient(p)[..., None])[..., 0]


def poisson_bracket(chart: SymplecticChart, f: Symbol, g: Symbol, p):
    """{f, g}(p) = df_p(X_g(p))."""
    p = chart.check_point(p)
    _check_symbol(chart, f)
    xg = hamiltonian_field(chart, g, p)
    out = np.einsum("...i,...i->...", f.gradient(p), xg)
    return float(out) if np.ndim(out) == 0 else out


def bracket_function(chart, f, g) -> Callable:
    """{f, g} as a plain callable of points (not an expression tree)."""

    def fn(p):
        return poisson_bracket(chart, f, g, p)

    return fn


def _check_symbol(chart, f):
    if f.dim != chart.n:
        raise DimensionError(f"symbol {f.label!r} has dimension {f.dim}, chart has {chart.n}")


# ---------------------------------------------------------------- finite differences


def central_gradient(fn: Callable, p, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar callable; works on point batches."""
    p = np.asarray(p, dtype=float)
    d = p.shape[-1]
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        cols.append((np.asarray(fn(p + e)) - np.asarray(fn(p - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def central_jacobian(field: Callable, p, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """J[..., i, j] = d field_i / d p_j by central differences."""
    p = np.asarray(p, dtype=float)
    d = p.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        cols.append((np.asarray(field(p + e)) - np.asarray(field(p - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def lie_bracket(field_x: Callable, field_y: Callable, p, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Lie bracket of two vector fields at ``p`` with sign ``DX.Y - DY.X``.

    With this sign ``[X_f, X_g] = X_{f,g}`` holds for the bracket convention of
    this module (the derivation-commutator sign would give ``-X_{f,g}``).
    """
    p = np.asarray(p, dtype=float)
    jx = central_jacobian(field_x, p, step)
    jy = central_jacobian(field_y, p, step)
    return np.einsum("...ij,...j->...i", jx, field_y(p)) - np.einsum("...ij,...j->...i", jy, field_x(p))


def _require_margin(chart, p, step):
    chart.check_point(p, margin=step)


def jacobi_residual(chart, f, g, h, p, fd_step: float = DEFAULT_FD_STEP) -> float:
    """|{f,{g,h}} + {g,{h,f}} + {h,{f,g}}| with the inner brackets differentiated numerically."""
    p = np.asarray(p, dtype=float)
    _require_margin(chart, p, fd_step)
    total = 0.0
    for a, b, c in ((f, g, h), (g, h, f), (h, f, g)):
        inner = bracket_function(chart, b, c)
        # {a, phi} = da(X_phi) with X_phi = Omega^{-T} grad(phi)
        x_inner = _dual(chart, p, central_gradient(inner, p, fd_step))
        total = total + np.einsum("...i,...i->...", a.gradient(p), x_inner)
    return float(np.max(np.abs(total)))


def field_bracket_residual(chart, f, g, p, fd_step: float = DEFAULT_FD_STEP) -> float:
    """||[X_f, X_g](p) - X_{f,g}(p)|| with finite-difference derivatives of the fields."""
    p = np.asarray(p, dtype=float)
    _require_margin(chart, p, fd_step)
    lhs = lie_bracket(lambda q: hamiltonian_field(chart, f, q), lambda q: hamiltonian_field(chart, g, q), p, fd_step)
    rhs = _dual(chart, p, central_gradient(bracket_function(chart, f, g), p, fd_step))
    return float(np.max(np.linalg.norm(lhs - rhs, axis=-1)))
