"""Toeplitz quantization on weighted Bergman spaces of the unit disk.

The space for weight parameter ``h`` uses the probability measure

    dmu(z) = (lam + 1)/pi * (1 - |z|^2)^lam dA(z),   lam = 2 (1/h - 1),

with orthonormal basis ``e_k = z^k / ||z^k||``.  Integrals are evaluated with a
tensor rule: Gauss-Jacobi in ``u = |z|^2`` against ``(1 - u)^lam`` and the
uniform trapezoid rule in the angle (via FFT).

Operators are assembled on a padded basis ``e_0..e_M`` (``M = N + pad``) and
products are compressed to ``e_0..e_N`` only after multiplying, so the reported
(N+1)x(N+1) blocks of products and commutators are free of truncation corners.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln, roots_jacobi

from .dsl import Symbol, SymbolFamily

__all__ = [
    "BergmanSpace",
    "CommutativityResult",
    "CorrespondenceScan",
    "NRule",
    "OperatorMatrix",
    "SpaceMismatchError",
    "WickSymbolGrid",
    "basis_norm",
    "basis_norm_closed",
    "commutativity_matrix",
    "commutator_norm",
    "correspondence_scan",
    "disk_samples",
    "loglog_slope",
    "star_product",
    "toeplitz_matrix",
    "weight_exponent",
    "wick_symbol",
]

RELIABLE_RADIUS = 0.9


class SpaceMismatchError(ValueError):
    pass


def weight_exponent(h: float) -> float:
    """lam(h) = 2 (1/h - 1)."""
    if not 0 < h < 1:
        raise ValueError(f"h must lie in (0, 1), got {h}")
    return 2.0 * (1.0 / h - 1.0)


def _jacobi_rule(n, lam):
    """Nodes u in (0, 1) and weights with sum(w * g(u)) ~ (lam + 1) * int_0^1 g(u) (1 - u)^lam du."""
    t, w = roots_jacobi(n, lam, 0.0)
    u = 0.5 * (1.0 + t)
    w = w * (lam + 1.0) * 2.0 ** (-lam - 1.0)
    return u, w


def basis_norm_closed(k, lam):
    """k! Gamma(lam + 2) / Gamma(k + lam + 2)."""
    if lam <= -1:
        raise ValueError(f"weight exponent must exceed -1, got {lam}")
    k = np.asarray(k, dtype=float)
    return np.exp(gammaln(k + 1) + gammaln(lam + 2) - gammaln(k + lam + 2))


def basis_norm(k: int, lam: float) -> float:
    """Squared norm of z^k under the normalized weight, computed as a radial moment integral."""
    if lam <= -1:
        raise ValueError(f"weight exponent must exceed -1, got {lam}")
    if k < 0:
        raise ValueError(f"degree must be nonnegative, got {k}")
    u, w = _jacobi_rule(max(64, k // 2 + 2), lam)
    return float(np.sum(w * u**k))


@dataclass(frozen=True)
class NRule:
    """Truncation degree N(h) = min(cap, ceil(scale / h))."""

    scale: float = 8.0
    cap: int = 160

    def __call__(self, h):
        return int(min(self.cap, math.ceil(self.scale / h - 1e-12)))


@dataclass(frozen=True, eq=False)
class BergmanSpace:
    """Truncated weighted Bergman space on the unit disk.

    ``lam`` defaults to ``weight_exponent(h)``; pass it explicitly for sensitivity
    studies.  ``pad`` is the guard band of extra basis functions (default
    ``max(16, N // 2)``).
    """

    h: float
    N: int
    lam: float | None = None
    pad: int | None = None
    n_r: int | None = None
    n_theta: int | None = None

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        if self.N < 0:
            raise ValueError(f"N must be nonnegative, got {self.N}")
        if self.lam is None:
            object.__setattr__(self, "lam", weight_exponent(self.h))
        if self.lam <= -1:
            raise ValueError(f"weight exponent must exceed -1, got {self.lam}")
        if self.pad is None:
            object.__setattr__(self, "pad", max(16, self.N // 2))
        M = self.N + self.pad
        min_r = max(64, 2 * M + 2 * math.ceil(self.lam))
        min_t = max(64, 4 * M + 4)
        if self.n_r is None:
            object.__setattr__(self, "n_r", min_r)
        if self.n_theta is None:
            object.__setattr__(self, "n_theta", min_t)
        if self.n_r < min_r or self.n_theta < min_t:
            raise ValueError(f"quadrature needs n_r >= {min_r} and n_theta >= {min_t}")

    @property
    def M(self):
        return self.N + self.pad

    @property
    def meta(self):
        return (self.h, self.lam, self.N, self.M)

    @cached_property
    def radial(self):
        return _jacobi_rule(self.n_r, self.lam)

    @cached_property
    def theta(self):
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    @cached_property
    def radial_basis(self):
        """R[i, k] = u_i^{k/2} / ||z^k||, shape (n_r, M + 1)."""
        u, _ = self.radial
        k = np.arange(self.M + 1)
        log_c = -0.5 * np.log(basis_norm_closed(k, self.lam))
        return np.exp(log_c[None, :] + 0.5 * k[None, :] * np.log(u)[:, None])

    @cached_property
    def nodes(self):
        """Quadrature points as an (n_r, n_theta, 2) array of (x, y)."""
        r = np.sqrt(self.radial[0])
        return np.stack([np.outer(r, np.cos(self.theta)), np.outer(r, np.sin(self.theta))], axis=-1)

    @property
    def r_max(self):
        return float(np.sqrt(self.radial[0].max()))

    def basis(self, z, upto=None):
        """e_k(z) for k = 0..upto (default N); shape z.shape + (upto + 1,)."""
        upto = self.N if upto is None else upto
        z = np.asarray(z, dtype=complex)
        k = np.arange(upto + 1)
        c = 1.0 / np.sqrt(basis_norm_closed(k, self.lam))
        return c * z[..., None] ** k

    def gram(self):
        """Quadrature Gram matrix of e_0..e_N (identity up to quadrature error)."""
        return toeplitz_matrix(self, lambda x, y: np.ones_like(x), label="1").entries

    def to_dict(self):
        return {"h": self.h, "lambda": self.lam, "N": self.N, "pad": self.pad, "n_r": self.n_r, "n_theta": self.n_theta}


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Compressed operator on span{e_0..e_M}; ``entries`` is the reliable (N+1) block."""

    full: np.ndarray
    meta: tuple
    label: str = ""

    @property
    def N(self):
        return self.meta[2]

    @property
    def h(self):
        return self.meta[0]

    @property
    def lam(self):
        return self.meta[1]

    @property
    def entries(self):
        n = self.N + 1
        return self.full[:n, :n]

    def hermitian_defect(self):
        e = self.entries
        return float(np.max(np.abs(e - e.conj().T)))

    def write_csv(self, path):
        """Rows (j, k, re, im) of the reliable block."""
        e = self.entries
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("j,k,re,im\n")
            for j, k in itertools.product(range(e.shape[0]), repeat=2):
                fh.write(f"{j},{k},{float(e[j, k].real)!r},{float(e[j, k].imag)!r}\n")


def _fourier_coefficients(space, symbol):
    """ahat[i, m] = (1/2pi) int a(sqrt(u_i) e^{i theta}) e^{-i m theta} dtheta, m taken mod n_theta."""
    if isinstance(symbol, tuple):
        re, im = symbol
        vals = _values(space, re) + 1j * _values(space, im)
    else:
        vals = _values(space, symbol)
    return np.fft.fft(vals, axis=1) / space.n_theta


def _values(space, symbol):
    if isinstance(symbol, Symbol):
        if symbol.dim != 1:
            raise ValueError(f"disk symbols must be of dimension 1, got {symbol.dim}")
        return np.asarray(symbol(space.nodes), dtype=float)
    return np.asarray(symbol(space.nodes[..., 0], space.nodes[..., 1]))


def toeplitz_matrix(space: BergmanSpace, a, label: str | None = None) -> OperatorMatrix:
    """Matrix of T_a in the orthonormal monomial basis, A[j, k] = <T_a e_k, e_j>.

    ``a`` is a real :class:`Symbol`, a ``(real, imag)`` pair of symbols, or a
    callable ``a(x, y)`` returning real or complex values.
    """
    ahat = _fourier_coefficients(space, a)
    _, w = space.radial
    R = space.radial_basis
    size = space.M + 1
    A = np.zeros((size, size), dtype=complex)
    rows = np.arange(size)
    for m in range(-(size - 1), size):
        coef = w * ahat[:, m % space.n_theta]
        if m >= 0:
            vals = coef @ (R[:, m:] * R[:, : size - m])
            A[rows[m:], rows[: size - m]] = vals
        else:
            vals = coef @ (R[:, : size + m] * R[:, -m:])
            A[rows[: size + m], rows[-m:]] = vals
    if label is None:
        label = a.label if isinstance(a, Symbol) else "+i*".join(s.label for s in a) if isinstance(a, tuple) else "a"
    return OperatorMatrix(A, space.meta, label)


def _check_pair(A, B):
    if A.meta != B.meta:
        raise SpaceMismatchError(f"operators live on different spaces: {A.meta} vs {B.meta}")


def commutator_norm(A: OperatorMatrix, B: OperatorMatrix, mode: str = "operator") -> float:
    """Norm of the (N+1)-compression of AB - BA; ``operator`` = largest singular value."""
    _check_pair(A, B)
    n = A.N + 1
    C = (A.full @ B.full - B.full @ A.full)[:n, :n]
    if mode == "operator":
        return float(np.linalg.norm(C, 2))
    if mode == "frobenius":
        return float(np.linalg.norm(C, "fro"))
    raise ValueError(f"unknown norm mode {mode!r}")


def star_product(space: BergmanSpace, A: OperatorMatrix, B: OperatorMatrix) -> OperatorMatrix:
    """Composition AB; its Wick symbol is the truncated star product of the Wick symbols."""
    _check_pair(A, B)
    if A.meta != space.meta:
        raise SpaceMismatchError("operators do not belong to this space")
    return OperatorMatrix(A.full @ B.full, A.meta, f"({A.label})*({B.label})")


@dataclass
class WickSymbolGrid:
    samples: np.ndarray
    values: np.ndarray
    meta: tuple


def _as_complex(samples):
    s = np.asarray(samples)
    if np.iscomplexobj(s):
        return s
    s = np.asarray(s, dtype=float)
    if s.ndim >= 1 and s.shape[-1] == 2:
        return s[..., 0] + 1j * s[..., 1]
    return s.astype(complex)


def wick_symbol(space: BergmanSpace, A: OperatorMatrix, samples) -> WickSymbolGrid:
    """Berezin (Wick) symbol on the diagonal: sum A_jk e_j(z) conj(e_k(z)) / K_N(z, z)."""
    if A.meta != space.meta:
        raise SpaceMismatchError("operator does not belong to this space")
    z = _as_complex(samples)
    if np.any(np.abs(z) > RELIABLE_RADIUS + 1e-12):
        warnings.warn(
            f"Wick symbol sampled outside |z| <= {RELIABLE_RADIUS}; truncation error may dominate",
            RuntimeWarning,
            stacklevel=2,
        )
    E = space.basis(z)
    num = np.einsum("...j,jk,...k->...", E, A.entries, E.conj())
    kernel = np.sum(np.abs(E) ** 2, axis=-1)
    return WickSymbolGrid(z, num / kernel, space.meta)


# ---------------------------------------------------------------- scans


def disk_samples(radius=RELIABLE_RADIUS, rings=8, per_ring=16):
    """Polar sample points with |z| <= radius, as an (k, 2) array including the origin."""
    pts = [np.zeros(2)]
    for r in radius * np.arange(1, rings + 1) / rings:
        th = 2 * np.pi * np.arange(per_ring) / per_ring
        pts.extend(np.stack([r * np.cos(th), r * np.sin(th)], axis=-1))
    return np.array(pts)


@dataclass
class CorrespondenceScan:
    """Commutator norms C(h) and the fitted log-log slope."""

    labels: tuple
    rows: list
    slope: float | None
    intercept: float | None
    bracket_max: float

    @property
    def h(self):
        return np.array([r["h"] for r in self.rows])

    @property
    def C(self):
        return np.array([r["commutator_norm"] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("h,lambda,N,pair,commutator_norm\n")
            pair = f"{self.labels[0]}|{self.labels[1]}"
            for r in self.rows:
                fh.write(f"{float(r['h'])!r},{float(r['lambda'])!r},{r['N']},{pair},{float(r['commutator_norm'])!r}\n")


def loglog_slope(h, C):
    """Least-squares slope and intercept of log C against log h."""
    slope, intercept = np.polyfit(np.log(h), np.log(C), 1)
    return float(slope), float(intercept)


def _spaces(h_list, N_rule, pad=None):
    rule = N_rule if callable(N_rule) else (lambda h: int(N_rule))
    return [BergmanSpace(h, rule(h), pad=pad) for h in h_list]


def correspondence_scan(
    a: Symbol,
    b: Symbol,
    h_list,
    N_rule=NRule(),
    bracket_chart=None,
    samples=None,
    noise_floor: float = 1e-10,
    pad=None,
) -> CorrespondenceScan:
    """Operator commutator norm C(h) for each h and the slope of log C vs log h.

    The slope is ``None`` when some C(h) sits at the noise floor (vanishing bracket).
    """
    from .symplectic import SymplecticChart, poisson_bracket

    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("a correspondence scan needs at least 3 values of h")
    if any(not 0 < h < 1 for h in h_list) or any(x <= y for x, y in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing inside (0, 1)")
    rows = []
    for space in _spaces(h_list, N_rule, pad):
        A = toeplitz_matrix(space, a)
        B = A if b is a else toeplitz_matrix(space, b)
        rows.append(
            {
                "h": space.h,
                "lambda": space.lam,
                "N": space.N,
                "commutator_norm": commutator_norm(A, B, "operator"),
                "commutator_frobenius": commutator_norm(A, B, "frobenius"),
            }
        )
    C = np.array([r["commutator_norm"] for r in rows])
    slope = intercept = None
    if np.all(C > noise_floor):
        slope, intercept = loglog_slope(np.array(h_list), C)
    chart = bracket_chart or SymplecticChart.bergman_disk()
    pts = disk_samples() if samples is None else np.asarray(samples, float)
    bracket = float(np.max(np.abs(poisson_bracket(chart, a, b, pts))))
    return CorrespondenceScan((a.label, b.label), rows, slope, intercept, bracket)


@dataclass
class CommutativityResult:
    """Per-h maximal pairwise commutator norms and the overall verdict."""

    names: tuple
    table: list  # dicts: h, lambda, N, i, j, commutator_norm
    tau_comm: float
    verdict: str
    worst: dict | None = field(default=None)

    @property
    def commutative(self):
        return self.verdict == "COMMUTATIVE"

    def per_h_max(self):
        out = {}
        for row in self.table:
            out[row["h"]] = max(out.get(row["h"], 0.0), row["commutator_norm"])
        return out

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("h,lambda,N,pair,commutator_norm\n")
            for r in self.table:
                pair = f"{self.names[r['i']]}|{self.names[r['j']]}"
                fh.write(f"{float(r['h'])!r},{float(r['lambda'])!r},{r['N']},{pair},{float(r['commutator_norm'])!r}\n")


def commutativity_matrix(family: SymbolFamily, h_list, N_rule=NRule(), tau_comm: float = 1e-9, pad=None):
    """Pairwise operator commutator norms of the family's Toeplitz operators over ``h_list``."""
    table = []
    worst = None
    for space in _spaces([float(h) for h in h_list], N_rule, pad):
        ops = [toeplitz_matrix(space, a) for a in family]
        for i, j in itertools.combinations(range(len(ops)), 2):
            c = commutator_norm(ops[i], ops[j])
            row = {"h": space.h, "lambda": space.lam, "N": space.N, "i": i, "j": j, "commutator_norm": c}
            table.append(row)
            if worst is None or c > worst["commutator_norm"]:
                worst = row
    verdict = "COMMUTATIVE" if worst is None or worst["commutator_norm"] <= tau_comm else "NOT COMMUTATIVE"
    return CommutativityResult(tuple(family.names), table, tau_comm, verdict, worst)
