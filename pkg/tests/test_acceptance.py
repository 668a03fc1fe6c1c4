"""Acceptance suite: one test per criterion, each emitting a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also collected into an "acceptance criteria" section of the terminal summary.
"""

import contextlib
import itertools
import json
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from lagfol.bergman import (
    BergmanSpace,
    NRule,
    basis_norm,
    basis_norm_closed,
    commutator_norm,
    correspondence_scan,
    toeplitz_matrix,
)
from lagfol.cli import main
from lagfol.dsl import SymbolFamily, compose, parse_symbol
from lagfol.foliation import (
    PreconditionError,
    flow_commutation_residual,
    involutivity_residual,
    isotropy_residual,
    lagrangian_residual,
    leafwise_constancy,
    prop_abelian_check,
    trace_leaf,
)
from lagfol.symplectic import SymplecticChart, field_bracket_residual, poisson_bracket

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
P = parse_symbol


class Criterion:
    """Collects named measurements; the verdict combines them with the runtime limit."""

    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit
        self.results = []

    def record(self, name, ok, detail=""):
        self.results.append((name, bool(ok), detail))

    def bound(self, name, value, tol):
        self.record(name, value <= tol, f"{value:.3g} <= {tol:g}")


@contextlib.contextmanager
def criterion(number, title, limit):
    c = Criterion(number, title, limit)
    start = time.perf_counter()
    error = None
    try:
        yield c
    except Exception as exc:  # reported as a FAIL line, then re-raised
        error = exc
    elapsed = time.perf_counter() - start
    c.record("runtime", elapsed < limit, f"{elapsed:.2f}s < {limit:g}s")
    failed = [r for r in c.results if not r[1]]
    verdict = "FAIL" if failed or error else "PASS"
    detail = "; ".join(f"{n}: {d}" for n, ok, d in (failed or c.results[-1:]))
    if error is not None:
        detail = f"{type(error).__name__}: {error}"
    line = f"criterion {number}: {verdict} - {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    if error is not None:
        raise error
    assert not failed, line


def random_polynomial(rng, dim, terms=4, degree=3):
    names = [f"{c}{i + 1}" for i in range(dim) for c in "xy"]
    out = []
    for _ in range(terms):
        coef = rng.uniform(-2, 2)
        powers = rng.multinomial(rng.integers(1, degree + 1), np.ones(2 * dim) / (2 * dim))
        mono = "*".join(f"{v}^{k}" for v, k in zip(names, powers) if k)
        out.append(f"({coef!r})*{mono}")
    return P(" + ".join(out), dim)


def disk_points(rng, k, r=0.8):
    rad = r * np.sqrt(rng.uniform(0, 1, k))
    th = rng.uniform(0, 2 * np.pi, k)
    return np.stack([rad * np.cos(th), rad * np.sin(th)], axis=-1)


def test_criterion_1_canonical_brackets():
    rng = np.random.default_rng(1)
    with criterion(1, "canonical bracket suite", 1.0) as c:
        n = 3
        chart = SymplecticChart.standard(n)
        pts = rng.uniform(-1, 1, size=(100, 2 * n))
        worst = 0.0
        for i, j in itertools.product(range(n), repeat=2):
            vals = poisson_bracket(chart, P(f"x{i + 1}", n), P(f"y{j + 1}", n), pts)
            worst = max(worst, np.max(np.abs(vals - (i == j))))
        c.bound("canonical {x_i, y_j} = delta_ij", worst, 1e-12)

        f, g, h = (random_polynomial(rng, n) for _ in range(3))
        fg, gf = poisson_bracket(chart, f, g, pts), poisson_bracket(chart, g, f, pts)
        c.bound("antisymmetry", np.max(np.abs(fg + gf)), 1e-12)
        alpha, beta = (float(v) for v in rng.uniform(-2, 2, 2))
        combo = P(f"({alpha!r})*({f}) + ({beta!r})*({g})", n)
        lhs = poisson_bracket(chart, combo, h, pts)
        rhs = alpha * poisson_bracket(chart, f, h, pts) + beta * poisson_bracket(chart, g, h, pts)
        c.bound("bilinearity", np.max(np.abs(lhs - rhs) / np.maximum(1, np.abs(rhs))), 1e-12)
        prod = P(f"({f})*({g})", n)
        lhs = poisson_bracket(chart, prod, h, pts)
        rhs = f(pts) * poisson_bracket(chart, g, h, pts) + g(pts) * poisson_bracket(chart, f, h, pts)
        c.bound("Leibniz", np.max(np.abs(lhs - rhs) / np.maximum(1, np.abs(rhs))), 1e-10)


def test_criterion_2_lie_homomorphism():
    rng = np.random.default_rng(2)
    with criterion(2, "field bracket equals field of the bracket", 5.0) as c:
        for label, chart in (("standard", SymplecticChart.standard(1)), ("bergman-disk", SymplecticChart.bergman_disk())):
            worst = 0.0
            for p in disk_points(rng, 20, 0.7):
                f, g = random_polynomial(rng, 1), random_polynomial(rng, 1)
                worst = max(worst, field_bracket_residual(chart, f, g, p, 1e-4))
            c.bound(f"{label} residual", worst, 1e-5)


def test_criterion_3_constructive_foliation():
    with criterion(3, "commuting rotations on R^4", 30.0) as c:
        chart = SymplecticChart.standard(2)
        fam = SymbolFamily.parse({"I1": "x1^2 + y1^2", "I2": "x2^2 + y2^2"}, 2)
        probes = [np.array(p) for p in ([0.3, 0.1, 0.2, 0.4], [0.5, 0.0, 0.5, 0.0], [-0.4, 0.7, 0.1, -0.6])]
        c.bound("isotropy", max(isotropy_residual(chart, fam, p) for p in probes), 1e-12)
        c.bound("involutivity", max(involutivity_residual(chart, fam, p, 1e-4) for p in probes), 1e-6)
        c.bound(
            "flow commutation",
            max(flow_commutation_residual(chart, fam, p, 0, 1, 0.3, 0.3, 1e-3) for p in probes),
            1e-9,
        )
        base = [0.5, 0.0, 0.5, 0.0]
        leaf = trace_leaf(chart, fam, base, 0.5, 0.05, 1e-3)
        c.bound("leaf constancy", leaf.diagnostics["constancy"], 1e-8)
        c.bound("lagrangian", lagrangian_residual(chart, leaf), 1e-4)
        coarse = trace_leaf(chart, fam, base, 0.5, 0.05, 0.05, diagnostics=False)
        fine = trace_leaf(chart, fam, base, 0.5, 0.05, 0.025, diagnostics=False)
        ratio = leafwise_constancy(coarse, fam) / leafwise_constancy(fine, fam)
        c.record("rk4 halving gain", ratio >= 8, f"{ratio:.1f} >= 8")


def test_criterion_4_leafwise_constant_functions_commute():
    rng = np.random.default_rng(4)
    outers = ["sin({a}*s1 + {b}*s2)", "exp({a}*s1)*s2^2", "({a}*s1 - {b}*s2)^3", "cos({a}*s1*s2) + {b}*s1"]
    with criterion(4, "functions of a Lagrangian submersion commute", 5.0) as c:
        chart = SymplecticChart.standard(2)
        sub = SymbolFamily.parse({"I1": "x1^2 + y1^2", "I2": "x2^2 + y2^2"}, 2)
        pairs = []
        for _ in range(10):
            u, v = (
                compose(rng.choice(outers).format(a=repr(rng.uniform(-1, 1)), b=repr(rng.uniform(-1, 1))), sub.members)
                for _ in range(2)
            )
            pairs.append((u, v))
        grid = rng.uniform(-1, 1, size=(50, 4))
        c.bound("max |{u(F), v(F)}|", prop_abelian_check(chart, sub, pairs, grid), 1e-12)
        try:
            prop_abelian_check(chart, SymbolFamily.parse({"x1": "x1", "y1": "y1"}, 2), [], grid)
            c.record("non-Lagrangian rejected", False, "no precondition error")
        except PreconditionError as err:
            ok = err.pair == ("x1", "y1") and err.witness == 1.0
            c.record("non-Lagrangian rejected", ok, f"witness {err.pair} = {err.witness}")


def test_criterion_5_orthonormality_and_moments():
    with criterion(5, "Bergman orthonormality and monomial norms", 10.0) as c:
        for lam in (0.0, 2.0, 6.0, 20.0, 38.0):
            g = BergmanSpace(0.5, 32, lam=lam).gram()
            c.bound(f"gram lam={lam:g}", np.max(np.abs(g - np.eye(33))), 1e-10)
            dev = max(abs(basis_norm(k, lam) - float(basis_norm_closed(k, lam))) for k in range(33))
            c.bound(f"moments lam={lam:g}", dev, 1e-12)


def test_criterion_6_radial_diagonality():
    r2, r4 = P("x1^2 + y1^2", 1), P("(x1^2 + y1^2)^2", 1)
    with criterion(6, "radial symbols give diagonal commuting operators", 20.0) as c:
        A = toeplitz_matrix(BergmanSpace(0.5, 32, lam=0.0), r2).entries
        k = np.arange(33)
        c.bound("diagonal (k+1)/(k+2)", np.max(np.abs(np.diag(A) - (k + 1) / (k + 2))), 1e-10)
        c.bound("off-diagonal", np.max(np.abs(A - np.diag(np.diag(A)))), 1e-10)
        for h in (0.4, 0.2, 0.1, 0.05):
            s = BergmanSpace(h, NRule()(h))
            c.bound(f"commutator h={h}", commutator_norm(toeplitz_matrix(s, r2), toeplitz_matrix(s, r4)), 1e-10)


def test_criterion_7_correspondence_slope():
    re, im = P("x1", 1, "re_z"), P("y1", 1, "im_z")
    h_list = [0.4, 0.2, 0.1, 0.05]
    with criterion(7, "commutator norm scales like h", 180.0) as c:
        scan = correspondence_scan(re, im, h_list)
        c.record("slope in [0.8, 1.2]", scan.slope is not None and 0.8 <= scan.slope <= 1.2, f"slope {scan.slope:.4f}")
        doubled = correspondence_scan(re, im, h_list, N_rule=NRule(scale=16, cap=320))
        change = np.max(np.abs(doubled.C - scan.C) / scan.C)
        c.bound("relative change when N doubles", change, 0.05)


def run_pipeline(tmp_path, name, out):
    doc = json.loads((CONFIGS / name).read_text())
    cfg = tmp_path / name
    cfg.write_text(json.dumps(doc))
    code = main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / out)])
    return code, json.loads((tmp_path / out / "report.json").read_text())


def test_criterion_8_pipeline(tmp_path):
    with criterion(8, "end-to-end pipeline, positive and negative", 120.0) as c:
        code, rep = run_pipeline(tmp_path, "radial_disk.json", "radial")
        c.record("radial exit code", code == 0, f"exit {code}")
        sing = rep["data"]["singular_set"]
        origin_only = sing["singular_nodes"] == [[0.0, 0.0]] and sing["cells_per_axis"] == 64
        c.record("singular set is the origin cell", origin_only, f"nodes {sing['singular_nodes']}")
        worst = max(leaf["constancy"] for leaf in rep["data"]["leaves"])
        c.bound("leaf constancy", worst, 1e-8)
        circles = 0.0
        for leaf in rep["data"]["leaves"]:
            rows = np.genfromtxt(tmp_path / "radial" / leaf["csv"], delimiter=",", names=True)
            r2 = rows["x_1"] ** 2 + rows["y_1"] ** 2
            base = leaf["base_point"][0] ** 2 + leaf["base_point"][1] ** 2
            circles = max(circles, float(np.max(np.abs(r2 - base))))
        c.bound("leaves are circles", circles, 1e-8)

        code, rep = run_pipeline(tmp_path, "re_im.json", "re_im")
        ff = rep["first_failure"] or {}
        ok = code == 1 and ff.get("stage") == "operator_commutativity" and ff["witness"]["pair"] == ["re_z", "im_z"]
        c.record("negative case", ok, f"exit {code} at {ff.get('stage')} witness {ff.get('witness', {}).get('pair')}")


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "pipeline report is reproducible", 120.0) as c:
        texts = []
        for out in ("first", "second"):
            _, rep = run_pipeline(tmp_path, "radial_disk.json", out)
            raw = (tmp_path / out / "report.json").read_text()
            rep.pop("metadata")
            texts.append((raw, json.dumps(rep, indent=2)))
        c.record("identical outside metadata", texts[0][1] == texts[1][1], "byte comparison")
        strip = [
            "\n".join(line for line in raw.splitlines() if '"generated_at"' not in line and '"output_dir"' not in line)
            for raw, _ in texts
        ]
        c.record("raw files differ only in metadata", strip[0] == strip[1], "line comparison")
