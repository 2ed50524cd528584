from fractions import Fraction

import numpy as np
import pytest

from heatlift.carnot import (BCH_MAX_DEGREE, CarnotGroup, LiftError, NoLiftingNeeded,
                             bch_group_law, bch_word_coefficients,
                             build_split_coordinates, flow_time_one, flow_with_time)
from heatlift.fields import VectorField, lie_closure
from heatlift.poly import DilationWeights, Poly


def F(*comps):
    return VectorField.from_strings(list(comps))


def filiform_basis(step):
    """Chain system {d1, sum_k x1^k d_{k+1}} realizing a step-`step` algebra."""
    n = step
    comps = ["0"]
    for k in range(1, n):
        comps.append(f"x1^{k}" if k > 1 else "x1")
    fields = [F(*(["1"] + ["0"] * (n - 1))), F(*comps)]
    return lie_closure(fields, DilationWeights(list(range(1, n + 1))))


class TestBCH:
    def test_degree_one_and_two_words(self):
        tab = bch_word_coefficients(2)
        assert tab["A"] == 1 and tab["B"] == 1
        # net coefficient of [A,B]: c_AB - c_BA must be 1/2
        assert tab.get("AB", Fraction(0)) - tab.get("BA", Fraction(0)) == Fraction(1, 2)

    def test_degree_three_net_coefficients(self):
        # in any algebra the degree-3 sum collapses to
        # 1/12 [A,[A,B]] + 1/12 [B,[B,A]]
        tab = bch_word_coefficients(3)
        get = lambda w: tab.get(w, Fraction(0))
        assert get("AAB") - get("ABA") == Fraction(1, 12)
        assert get("BBA") - get("BAB") == Fraction(1, 12)

    def test_heisenberg_law(self, grushin_basis):
        law, inv = bch_group_law(grushin_basis)
        a = [Poly.var(6, k) for k in range(3)]
        b = [Poly.var(6, 3 + k) for k in range(3)]
        half = Fraction(1, 2)
        assert law[0] == a[0] + b[0]
        assert law[1] == a[1] + b[1]
        assert law[2] == a[2] + b[2] + (a[0] * b[1] - a[1] * b[0]).scale(half)
        assert inv == [-Poly.var(3, k) for k in range(3)]

    @pytest.mark.parametrize("step", [3, 4])
    def test_filiform_associativity_exact(self, step):
        basis = filiform_basis(step)
        law, _ = bch_group_law(basis)
        N = basis.dim
        g3 = [Poly.var(3 * N, k) for k in range(3 * N)]
        a, b, c = g3[:N], g3[N: 2 * N], g3[2 * N:]
        ab = [l.subs(a + b) for l in law]
        bc = [l.subs(b + c) for l in law]
        assert [l.subs(ab + c) for l in law] == [l.subs(a + bc) for l in law]

    @pytest.mark.parametrize("step", [5, 6])
    def test_filiform_associativity_random_rational(self, step):
        basis = filiform_basis(step)
        law, _ = bch_group_law(basis)
        N = basis.dim
        rng = np.random.default_rng(step)

        def law_at(u, v):
            return [l(list(u) + list(v)) for l in law]

        for _ in range(12):
            pts = [Fraction(int(v), 4) for v in rng.integers(-6, 7, size=3 * N)]
            a, b, c = pts[:N], pts[N: 2 * N], pts[2 * N:]
            assert law_at(law_at(a, b), c) == law_at(a, law_at(b, c))

    def test_step_cap(self):
        basis = filiform_basis(BCH_MAX_DEGREE + 1)
        with pytest.raises(LiftError):
            bch_group_law(basis)


class TestFlows:
    def test_translation_flow(self):
        fm = flow_time_one(F("1", "0"))
        assert fm.components[0] == Poly.var(2, 0) + 1
        assert fm.components[1] == Poly.var(2, 1)

    def test_zero_flow_is_identity(self):
        fm = flow_time_one(VectorField.zero(2))
        assert list(fm.components) == Poly.variables(2)

    def test_non_nilpotent_flow_rejected(self):
        from heatlift.carnot import FlowError

        with pytest.raises(FlowError):
            flow_time_one(F("x1^2", "0"))  # raises the degree each step

    def test_parameterised_flow_from_origin(self):
        # flow of a1 d1 + a2 (x1 d2) + a3 d2 from 0 lands at (a1, a3 + a1 a2 / 2)
        from heatlift.carnot import lie_series_flow

        nv = 2 + 3  # (x1, x2, a1, a2, a3)
        a = [Poly.var(nv, 2 + k) for k in range(3)]
        comps = [a[0], a[1] * Poly.var(nv, 0) + a[2]]
        flow = lie_series_flow(comps, 2)
        at_zero = [Poly.zero(3)] * 2 + Poly.variables(3)
        end = [f.subs(at_zero) for f in flow]
        a3 = Poly.variables(3)
        assert end[0] == a3[0]
        assert end[1] == a3[2] + (a3[0] * a3[1]).scale(Fraction(1, 2))

    def test_time_flow_matches_time_one(self):
        V = F("1", "x1")
        fm = flow_with_time(V)
        one = flow_time_one(V)
        sub = Poly.variables(2) + [Poly.const(2, 1)]
        assert [c.subs(sub) for c in fm.components] == list(one.components)


class TestGrushinSplit:
    def test_law_inverse(self, grushin_group):
        G = grushin_group
        assert [c.format() for c in G.law.components] == [
            "x4 + x1", "x5 + x2 + x1 x6", "x6 + x3"]
        assert [c.format() for c in G.inverse.components] == [
            "-x1", "-x2 + x1 x3", "-x3"]

    def test_lifted_fields(self, grushin_group):
        Z1, Z2 = grushin_group.Z
        assert [c.format() for c in Z1.components] == ["1", "0", "0"]
        assert [c.format() for c in Z2.components] == ["0", "x1", "1"]
        R1, R2 = grushin_group.R
        assert R1.is_zero()
        assert [c.format() for c in R2.components] == ["0", "0", "1"]

    def test_dimensions(self, grushin_group):
        G = grushin_group
        assert (G.n, G.p, G.N, G.m) == (2, 1, 3, 2)
        assert (G.q, G.q_star, G.Q) == (3, 1, 4)
        assert G.step == 2

    def test_conv_map(self, grushin_group):
        Fm = grushin_group.F
        assert [c.format() for c in Fm.components] == [
            "x3 - x1", "x4 - x2 - x1 x5", "x5"]

    def test_psi_identity_for_grushin(self, grushin_group):
        assert [c.format() for c in grushin_group.psi_inv.components] == ["x5"]

    def test_phi_is_negation(self, grushin_group):
        assert [c.format() for c in grushin_group.phi.components] == ["-x5"]

    def test_verification_report_green(self, grushin_group):
        rep = grushin_group.report
        assert rep["associativity"] and rep["left_invariance"]
        assert rep["lifting_identity_monomials"]
        assert all(v for k, v in rep.items() if k != "weights_flagged_non_integer")

    def test_json_round_trip(self, grushin_group):
        G2 = CarnotGroup.loads(grushin_group.dumps())
        assert [c.format() for c in G2.law.components] == [
            c.format() for c in grushin_group.law.components]
        assert G2.Q == grushin_group.Q
        assert G2.structure == grushin_group.structure


class TestGroupNumerics:
    def test_group_axioms_numeric(self, grushin_group):
        G = grushin_group
        rng = np.random.default_rng(0)
        g, h, k = rng.uniform(-2, 2, (3, 3))
        gh_k = G.multiply(G.multiply(g, h), k)
        g_hk = G.multiply(g, G.multiply(h, k))
        assert gh_k == pytest.approx(g_hk, rel=1e-12)
        assert G.multiply(g, G.invert(g)) == pytest.approx(np.zeros(3), abs=1e-14)

    def test_dilations_are_automorphisms(self, grushin_group):
        G = grushin_group
        rng = np.random.default_rng(1)
        g, h = rng.uniform(-1, 1, (2, 3))
        lam = 1.7
        lhs = G.dilate(lam, G.multiply(g, h))
        rhs = G.multiply(G.dilate(lam, g), G.dilate(lam, h))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_F_at_origin_pole(self, grushin_group):
        G = grushin_group
        y = np.array([0.4, -0.2])
        eta = np.array([0.3])
        out = G.conv_F(np.zeros(2), y, eta)[0]
        assert out == pytest.approx([0.4, -0.2, 0.3])

    def test_F_group_identity(self, grushin_group):
        G = grushin_group
        x = np.array([0.7, 0.1])
        out = G.conv_F(x, x, np.zeros(1))[0]
        assert out == pytest.approx(np.zeros(3), abs=1e-15)

    def test_psi_round_trip_numeric(self, grushin_group):
        G = grushin_group
        rng = np.random.default_rng(2)
        x, y = rng.uniform(-1, 1, (2, 2))
        eta = rng.uniform(-2, 2, (5, 1))
        fwd = G.psi(x, y, eta)
        back = G.psi_inverse(x, y, fwd)
        assert back == pytest.approx(eta, rel=1e-12)

    def test_psi_straightening_inequality(self, grushin_group):
        # h(F(x, y, Psi^{-1}(u))) >= nu(u)
        G = grushin_group
        rng = np.random.default_rng(3)
        x, y = rng.uniform(-1.5, 1.5, (2, 2))
        u = rng.uniform(-4, 4, (50, 1))
        pts = G.straightened_point(x, y, u)
        assert np.all(G.norms.h(pts) >= G.norms.nu(u) - 1e-12)

    def test_phi_defining_identity_numeric(self, grushin_group):
        G = grushin_group
        rng = np.random.default_rng(4)
        x, y = rng.uniform(-1, 1, (2, 2))
        u = rng.uniform(-1, 1, (4, 1))
        phi_u = G.phi_xy(x, y, u)
        lhs = G.conv_F(x, y, phi_u)
        xu = np.concatenate([np.tile(x, (4, 1)), u], axis=1)
        rhs = G.multiply(G.invert(xu), np.concatenate([y, np.zeros(1)])[None, :])
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_phi_fixes_origin_on_diagonal(self, grushin_group):
        G = grushin_group
        x = np.array([0.3, -0.7])
        assert G.phi_xy(x, x, np.zeros((1, 1)))[0] == pytest.approx([0.0])


class TestNorms:
    def test_homogeneity(self, grushin_group):
        norms = grushin_group.norms
        rng = np.random.default_rng(5)
        x = rng.uniform(-2, 2, (10, 2))
        xi = rng.uniform(-2, 2, (10, 1))
        lam = 2.5
        assert norms.S(x * [lam, lam**2]) == pytest.approx(lam * norms.S(x))
        assert norms.nu(xi * lam) == pytest.approx(lam * norms.nu(xi))
        pts = np.concatenate([x, xi], axis=1)
        assert norms.h(grushin_group.dilate(lam, pts)) == pytest.approx(
            lam * norms.h(pts))

    def test_nu_ball_volume_matches_quadrature(self, grushin_group):
        # p = 1, sigma* = (1): {|u| <= 1} has volume 2
        assert grushin_group.norms.nu_ball_volume() == pytest.approx(2.0)


class TestOtherSystems:
    def test_engel_lift(self, engel_group):
        G = engel_group
        assert (G.n, G.p, G.N) == (3, 1, 4)
        assert (G.q, G.q_star, G.Q) == (6, 1, 7)
        assert G.step == 3
        assert [c.format() for c in G.Z[1].components] == ["0", "x1", "x1^2", "1"]

    def test_heisenberg_needs_no_lift(self):
        fields = [F("1", "0", "-1/2 x2"), F("0", "1", "1/2 x1")]
        basis = lie_closure(fields, DilationWeights([1, 1, 2]))
        with pytest.raises(NoLiftingNeeded):
            build_split_coordinates(basis)

    def test_step4_lift_verifies(self):
        basis = filiform_basis(4)
        G = build_split_coordinates(basis)
        assert G.step == 4
        assert G.report["associativity"]

    def test_abelian_product_group(self):
        A = CarnotGroup.abelian(1, 2)
        assert (A.n, A.p, A.N) == (1, 2, 3)
        g = np.array([1.0, 2.0, 3.0])
        h = np.array([0.5, -1.0, 0.25])
        assert A.multiply(g, h) == pytest.approx(g + h)
