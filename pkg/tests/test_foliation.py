import csv
import math

import numpy as np
import pytest

from lagfol.dsl import SymbolFamily, compose, parse_symbol
from lagfol.foliation import (
    FamilyTooSmallError,
    FlowEscapeError,
    LeafEscapedError,
    PreconditionError,
    distribution_frame,
    flow,
    flow_commutation_residual,
    involutivity_residual,
    isotropy_residual,
    lagrangian_residual,
    leafwise_constancy,
    prop_abelian_check,
    reversibility_residual,
    richness_scan,
    trace_leaf,
)
from lagfol.symplectic import SymplecticChart, hamiltonian_field, omega, poisson_bracket

F = SymbolFamily.parse


@pytest.fixture
def circle_family():
    return F(["x1^2 + y1^2"], 1)


class TestRichness:
    def test_origin_only(self, disk, circle_family):
        est = richness_scan(disk, circle_family, cells=64)
        assert est.singular_nodes.tolist() == [[0.0, 0.0]]
        assert est.singular_cells == [(31, 31), (31, 32), (32, 31), (32, 32)]
        assert 0 < est.covering_fraction < 0.01

    def test_independent_coordinates(self, std2):
        est = richness_scan(SymplecticChart.standard(2, -1, 1), F(["x1", "x2"], 2), cells=4)
        assert est.empty and est.covering_fraction == 0.0

    def test_dependent_family(self):
        chart = SymplecticChart.standard(2, -1, 1)
        est = richness_scan(chart, F(["x1", "2*x1"], 2), cells=4)
        assert est.n_regular == 0 and est.n_nodes == len(est.singular_nodes)
        assert est.covering_fraction == 1.0

    def test_recheck(self, disk, circle_family):
        est = richness_scan(disk, circle_family, cells=16)
        assert np.all(est.recheck(disk, circle_family) < est.tau_rank)

    def test_too_small(self, std2):
        with pytest.raises(FamilyTooSmallError):
            richness_scan(std2, F(["x1"], 2), cells=2)

    def test_frame_consistency(self, std2, torus_family):
        p = np.array([0.3, 0.1, 0.2, 0.4])
        fr = distribution_frame(std2, torus_family, p)
        for col, i in enumerate(fr.members):
            assert np.array_equal(fr.frame[:, col], hamiltonian_field(std2, torus_family[i], p))
        assert fr.sigma_n >= 1e-8


class TestIsotropy:
    def test_coordinates(self, std2):
        assert isotropy_residual(std2, F(["x1", "x2"], 2), [0.1, 0.2, 0.3, 0.4]) == 0.0

    def test_single(self, disk, circle_family):
        assert isotropy_residual(disk, circle_family, [0.3, 0.1]) == 0.0

    def test_canonical_pair_witness(self, std2, rng):
        for p in rng.uniform(-1, 1, size=(5, 4)):
            assert isotropy_residual(std2, F(["x1", "y1"], 2), p) == 1.0

    def test_isotropy_equals_poisson(self, std2, rng):
        a, b = parse_symbol("x1*y2 + sin(x2)", 2), parse_symbol("y1^2 - x1*x2", 2)
        for p in rng.uniform(-1, 1, size=(20, 4)):
            w = omega(std2, p, hamiltonian_field(std2, a, p), hamiltonian_field(std2, b, p))
            assert abs(w - poisson_bracket(std2, a, b, p)) <= 1e-12


class TestInvolutivity:
    def test_constant_fields(self, std2):
        assert involutivity_residual(std2, F(["x1", "x2"], 2), [0.1, 0.2, 0.3, 0.4]) <= 1e-12

    def test_single_generator(self, disk, circle_family):
        assert involutivity_residual(disk, circle_family, [0.3, 0.2]) == 0.0

    def test_commuting_rotations(self, std2, torus_family):
        assert involutivity_residual(std2, torus_family, [0.3, 0.1, 0.2, 0.4], 1e-4) <= 1e-6

    def test_commuting_family_on_grid(self):
        chart = SymplecticChart.standard(2, -1, 1)
        fam = F(["x1^2 + y1^2 + x2*y2", "(x1^2 + y1^2)^2", "x2*y2"], 2)
        pts = np.random.default_rng(3).uniform(-0.8, 0.8, size=(15, 4))
        for p in pts:
            for i in range(3):
                for j in range(3):
                    assert abs(poisson_bracket(chart, fam[i], fam[j], p)) <= 1e-10
            assert involutivity_residual(chart, fam, p, 1e-4) <= 1e-5


class TestTraceLeaf:
    def test_circle_quarter(self, std1, circle_family):
        leaf = trace_leaf(std1, circle_family, [0.5, 0.0], math.pi / 4, math.pi / 40, 1e-3)
        assert np.allclose(leaf.points[-1], [0.0, -0.5], atol=1e-8, rtol=0)
        assert np.array_equal(leaf.points[leaf.center], [0.5, 0.0])

    def test_circle_exact_solution(self, std1, circle_family):
        leaf = trace_leaf(std1, circle_family, [0.5, 0.0], 1.0, 0.1, 1e-3)
        t = leaf.ts
        exact = np.stack([0.5 * np.cos(2 * t), -0.5 * np.sin(2 * t)], axis=-1)
        assert np.max(np.abs(leaf.points - exact)) <= 1e-12

    def test_plane_leaf(self):
        chart = SymplecticChart.standard(2, -2, 2)
        leaf = trace_leaf(chart, F(["x1", "x2"], 2), np.zeros(4), 1.0, 0.25, 0.05)
        for (i, j) in np.ndindex(*leaf.escaped.shape):
            t1, t2 = leaf.ts[i], leaf.ts[j]
            assert np.allclose(leaf.points[i, j], [0.0, -t1, 0.0, -t2], atol=1e-14)

    def test_bergman_circle(self, disk, circle_family):
        leaf = trace_leaf(disk, circle_family, [0.5, 0.0], 2.0, 0.05, 1e-3)
        r2 = np.sum(leaf.valid_points() ** 2, axis=-1)
        assert np.max(np.abs(r2 - 0.25)) <= 1e-8

    def test_constancy_examples(self, std1, circle_family):
        leaf = trace_leaf(std1, circle_family, [0.5, 0.0], math.pi / 2, math.pi / 40, 1e-3)
        assert leafwise_constancy(leaf, circle_family) <= 1e-8
        assert leafwise_constancy(leaf, F(["1 + 0*x1"], 1)) == 0.0
        # half period in each direction covers the whole circle: x1 ranges over [-0.5, 0.5]
        assert leafwise_constancy(leaf, F(["x1"], 1)) == pytest.approx(1.0, abs=1e-8)

    def test_escape_marks_nodes(self):
        chart = SymplecticChart.standard(1, -1, 1)
        leaf = trace_leaf(chart, F(["x1"], 1), [0.0, 0.0], 2.0, 0.25, 0.05)
        # flow of x1 is y -> y - t, leaving the box |y| < 1 for |t| >= 1
        assert leaf.escaped[np.abs(leaf.ts) >= 1.0 + 1e-9].all()
        assert not leaf.escaped[np.abs(leaf.ts) < 1.0 - 1e-9].any()
        assert np.isnan(leaf.points[0]).all()

    def test_all_escaped(self):
        chart = SymplecticChart.standard(1, -1, 1)
        with pytest.raises(LeafEscapedError):
            trace_leaf(chart, F(["100*x1"], 1), [0.0, 0.0], 0.5, 0.25, 0.05)

    def test_rk4_step_bound(self, std1, circle_family):
        with pytest.raises(ValueError):
            trace_leaf(std1, circle_family, [0.5, 0.0], 1.0, 0.01, 0.1)

    def test_reversibility(self, disk, circle_family):
        leaf = trace_leaf(disk, circle_family, [0.4, 0.3], 1.0, 0.05, 1e-3)
        assert leaf.diagnostics["reversibility"] <= 1e-13
        assert reversibility_residual(disk, circle_family, leaf) == leaf.diagnostics["reversibility"]

    def test_fourth_order_convergence(self, std1, circle_family):
        coarse = trace_leaf(std1, circle_family, [0.5, 0.0], 1.0, 0.05, 0.05, diagnostics=False)
        fine = trace_leaf(std1, circle_family, [0.5, 0.0], 1.0, 0.05, 0.025, diagnostics=False)
        ratio = leafwise_constancy(coarse, circle_family) / leafwise_constancy(fine, circle_family)
        assert ratio >= 8

    def test_csv(self, tmp_path, std2, torus_family):
        leaf = trace_leaf(std2, torus_family, [0.5, 0.0, 0.5, 0.0], 0.1, 0.05, 1e-2)
        path = tmp_path / "leaf.csv"
        leaf.write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["t_1", "t_2", "x_1", "y_1", "x_2", "y_2", "escaped"]
        assert len(rows) == 1 + 25
        center = rows[1 + 12]
        assert [float(v) for v in center[:6]] == [0.0, 0.0, 0.5, 0.0, 0.5, 0.0]


class TestTorus:
    @pytest.fixture
    def leaf(self, std2, torus_family):
        return trace_leaf(std2, torus_family, [0.5, 0.0, 0.5, 0.0], 0.5, 0.05, 1e-3)

    def test_diagnostics(self, leaf):
        d = leaf.diagnostics
        assert d["constancy"] <= 1e-8
        assert d["isotropy"] <= 1e-12
        assert d["lagrangian"] <= 1e-4
        assert d["escaped_nodes"] == 0

    def test_lagrangian(self, std2, leaf):
        assert lagrangian_residual(std2, leaf) <= 1e-4

    def test_circle_lagrangian_convention(self, std1, circle_family):
        leaf = trace_leaf(std1, circle_family, [0.5, 0.0], 0.5, 0.05, 1e-2)
        assert lagrangian_residual(std1, leaf) == 0.0

    def test_plane_lagrangian(self):
        chart = SymplecticChart.standard(2, -2, 2)
        leaf = trace_leaf(chart, F(["x1", "x2"], 2), np.zeros(4), 1.0, 0.25, 0.05)
        assert lagrangian_residual(chart, leaf) <= 1e-12

    def test_non_lagrangian_surface_detected(self):
        # flows of x1 and y1 sweep the (x1, y1) plane, which is symplectic, not Lagrangian
        chart = SymplecticChart.standard(2, -2, 2)
        leaf = trace_leaf(chart, F(["x1", "y1"], 2), np.zeros(4), 0.5, 0.25, 0.05, diagnostics=False)
        assert lagrangian_residual(chart, leaf) == pytest.approx(1.0)


class TestFlowCommutation:
    def test_translations(self, std2):
        r = flow_commutation_residual(std2, F(["x1", "x2"], 2), [0.1, 0.2, 0.3, 0.4], 0, 1, 0.7, -0.4)
        assert r <= 1e-13

    def test_same_flow(self, disk):
        fam = F(["x1^2*y1 + y1"], 1)
        assert flow_commutation_residual(disk, fam, [0.1, 0.2], 0, 0, 0.3, 0.2) <= 1e-12

    def test_rotations(self, std2, torus_family):
        r = flow_commutation_residual(std2, torus_family, [0.3, 0.1, 0.2, 0.4], 0, 1, 0.3, 0.3, 1e-3)
        assert r <= 1e-9

    def test_non_commuting_flows(self, std2):
        fam = F(["x1^2", "y1^2"], 2)
        assert flow_commutation_residual(std2, fam, [0.3, 0.1, 0.2, 0.4], 0, 1, 0.3, 0.3) > 1e-3

    def test_escape(self):
        chart = SymplecticChart.standard(1, -1, 1)
        with pytest.raises(FlowEscapeError):
            flow(chart, parse_symbol("x1", 1), [0.0, 0.0], 2.0)


class TestPropAbelian:
    def test_radial(self, disk):
        F1 = F({"r2": "x1^2 + y1^2"}, 1)
        a = compose("s1", F1.members)
        b = compose("s1^2", F1.members)
        th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        grid = np.concatenate([np.stack([r * np.cos(th), r * np.sin(th)], -1) for r in (0.1, 0.4, 0.8)])
        assert prop_abelian_check(disk, F1, [(a, b)], grid) <= 1e-12

    def test_coordinates(self, std2, rng):
        sub = F({"x1": "x1", "x2": "x2"}, 2)
        a = compose("sin(s1)", sub.members)
        b = compose("exp(s2)", sub.members)
        assert prop_abelian_check(std2, sub, [(a, b)], rng.uniform(-1, 1, (30, 4))) <= 1e-12

    def test_rejects_non_lagrangian(self, std2, rng):
        sub = F({"x1": "x1", "y1": "y1"}, 2)
        with pytest.raises(PreconditionError) as exc:
            prop_abelian_check(std2, sub, [], rng.uniform(-1, 1, (5, 4)))
        assert exc.value.pair == ("x1", "y1") and exc.value.witness == 1.0

    def test_wrong_component_count(self, std2):
        with pytest.raises(FamilyTooSmallError):
            prop_abelian_check(std2, F(["x1"], 2), [], np.zeros((1, 4)))
