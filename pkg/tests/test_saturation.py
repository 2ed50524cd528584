import math

import numpy as np
import pytest

from heatlift.carnot import CarnotGroup
from heatlift.kernel import HeatKernel
from heatlift.oracle import fd_derivative, fd_time_derivative
from heatlift.saturation import DerivativeSpec, PoleError, SaturatedKernel
from tests.conftest import grushin_fields


class TestEuclideanSaturation:
    def test_identity_on_grid(self, abelian_sat):
        # int_R Gamma_2(t, x, xi) dxi = Gamma_1(t, x)
        for t in np.linspace(0.25, 4, 5):
            for xv in np.linspace(-2, 2, 5):
                got = abelian_sat.gamma(0.0, [0.0], t, [xv])
                want = (4 * math.pi * t) ** -0.5 * math.exp(-(xv**2) / (4 * t))
                assert got == pytest.approx(want, rel=1e-8)

    def test_two_fiber_dimensions(self):
        # p = 2 exercises the iterated fiber quadrature
        group = CarnotGroup.abelian(1, 2)
        sat = SaturatedKernel(group, HeatKernel(group), rel_tol=1e-7)
        got = sat.gamma(0.0, [0.3], 1.0, [0.8])
        want = (4 * math.pi) ** -0.5 * math.exp(-(0.5**2) / 4)
        assert got == pytest.approx(want, rel=1e-6)

    def test_abelian_homogeneity_q1(self, abelian_sat):
        lhs, rhs = abelian_sat.homogeneity_probe(3.0, 0.0, [0.2], 1.0, [0.9])
        assert lhs == pytest.approx(rhs, rel=1e-8)
        base = abelian_sat.gamma(0.0, [0.2], 1.0, [0.9])
        assert lhs == pytest.approx(base / 3.0, rel=1e-8)


class TestGammaStructure:
    def test_zero_for_s_before_t(self, grushin_sat):
        assert grushin_sat.gamma(1.0, [0.1, 0.2], 0.5, [0.3, 0.4]) == 0.0
        assert grushin_sat.gamma(1.0, [0.1, 0.2], 1.0, [0.3, 0.4]) == 0.0

    def test_positive_after(self, grushin_sat):
        assert grushin_sat.gamma(0.0, [0.0, 0.0], 1.0, [0.0, 0.0]) > 0.0

    def test_pole_is_domain_error(self, grushin_sat):
        with pytest.raises(PoleError):
            grushin_sat.gamma(1.0, [0.1, 0.2], 1.0, [0.1, 0.2])

    def test_time_translation_bit_equal(self, grushin_sat):
        a = grushin_sat.gamma(0.0, [0.3, -0.2], 1.0, [0.5, 0.4])
        b = grushin_sat.gamma(2.5, [0.3, -0.2], 3.5, [0.5, 0.4])
        assert a == b  # both route through tau = s - t

    def test_time_reflection(self, grushin_sat):
        a = grushin_sat.gamma(0.25, [0.3, -0.2], 1.25, [0.5, 0.4])
        b = grushin_sat.gamma(-1.25, [0.3, -0.2], -0.25, [0.5, 0.4])
        assert a == b

    def test_space_symmetry(self, grushin_sat):
        rng = np.random.default_rng(31)
        for _ in range(5):
            x, y = rng.uniform(-1.5, 1.5, (2, 2))
            a = grushin_sat.gamma(0.0, x, 1.0, y)
            b = grushin_sat.gamma(0.0, y, 1.0, x)
            assert a == pytest.approx(b, rel=1e-10)

    def test_homogeneity_q_is_base_weight_sum(self, grushin_sat):
        # q = sigma_1 + sigma_2 = 3 for the degenerate pair, not the
        # generator count; machine-precision agreement pins the exponent
        for lam in (0.5, 2.0, 3.0):
            lhs, rhs = grushin_sat.homogeneity_probe(
                lam, 0.0, [0.3, -0.2], 1.0, [0.5, 0.4])
            assert lhs == pytest.approx(rhs, rel=1e-9)
        wrong = 2.0 ** (-2.0) * grushin_sat.gamma(0.0, [0.3, -0.2], 1.0, [0.5, 0.4])
        lhs, _ = grushin_sat.homogeneity_probe(2.0, 0.0, [0.3, -0.2], 1.0, [0.5, 0.4])
        assert abs(lhs - wrong) / wrong > 0.4

    def test_lambda_one_trivial(self, grushin_sat):
        lhs, rhs = grushin_sat.homogeneity_probe(1.0, 0.0, [0.3, 0.1], 1.0, [0.0, 0.4])
        assert lhs == rhs


class TestGammaStar:
    def test_swap_definition(self, grushin_sat):
        x, y = [0.3, -0.2], [0.5, 0.4]
        assert grushin_sat.gamma_star(1.0, x, 0.0, y) == pytest.approx(
            grushin_sat.gamma(0.0, y, 1.0, x), rel=1e-12)

    def test_vanishing_direction_reversed(self, grushin_sat):
        x, y = [0.3, -0.2], [0.5, 0.4]
        assert grushin_sat.gamma_star(0.0, x, 1.0, y) == 0.0
        assert grushin_sat.gamma_star(1.0, x, 0.0, y) > 0.0

    def test_lifted_identity(self, grushin_sat):
        x, y = [0.3, -0.2], [0.5, 0.4]
        direct = grushin_sat.gamma_star(1.0, x, 0.0, y)
        lifted = grushin_sat.gamma_star_lifted(1.0, x, 0.0, y)
        assert lifted == pytest.approx(direct, rel=1e-9)


class TestTailPolicy:
    def test_beta_recorded_and_binding(self, grushin_sat, grushin_group):
        assert grushin_sat.beta > 0
        rng = np.random.default_rng(77)
        x, y = rng.uniform(-1.2, 1.2, (2, 2))
        u = np.concatenate([np.logspace(-1, 1.2, 40), -np.logspace(-1, 1.2, 40)])
        pts = grushin_group.straightened_point(x, y, u[:, None])
        for tau in (0.3, 2.0):
            vals = grushin_sat.kernel.values(tau, pts)
            nu = grushin_group.norms.nu(u[:, None])
            assert np.all(vals * nu**4 <= grushin_sat.beta * (1 + 1e-9))

    def test_radius_shrinks_with_looser_tolerance(self, grushin_sat):
        r_tight = grushin_sat.truncation_radius(1.0, 1e-12)
        r_loose = grushin_sat.truncation_radius(1.0, 1e-4)
        assert r_loose <= r_tight

    def test_mass_one(self, grushin_sat):
        for s, x in ((1.0, [0.0, 0.0]), (0.25, [1.0, 0.5])):
            mass, _ = grushin_sat.mass(0.0, x, s)
            assert mass == pytest.approx(1.0, abs=2e-5)

    def test_frozen_rule_matches_adaptive(self, grushin_sat):
        rng = np.random.default_rng(13)
        Y = rng.uniform(-2, 2, (10, 2))
        ref = grushin_sat.gamma_tau(1.0, np.zeros(2), Y, rel_tol=1e-8)
        rule = grushin_sat.calibrated_fiber_rule(1.0, np.zeros(2), 1e-6)
        fro, _ = grushin_sat.gamma_tau_frozen(1.0, np.zeros(2), Y, rule)
        assert fro == pytest.approx(ref, rel=1e-5)

    def test_sandwich_constant_exists(self, grushin_sat):
        c = grushin_sat.fit_sandwich_c()
        assert c <= 50.0
        lower, upper = grushin_sat.sandwich_bounds(0.0, [0.4, 0.1], 1.0,
                                                   [-0.3, 0.6], c)
        val = grushin_sat.gamma(0.0, [0.4, 0.1], 1.0, [-0.3, 0.6])
        assert lower <= val <= upper

    def test_vanishing_at_infinity_trend(self, grushin_sat):
        vals = [grushin_sat.gamma(0.0, [0.2, -0.1], 1.0, [k, 0.0])
                for k in (2, 5, 10, 16, 20)]
        assert all(b <= a * 1.05 + 1e-12 for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-8


class TestDerivativeFormulas:
    POINT = (0.0, np.array([0.3, 0.2]), 1.0, np.array([0.5, -0.1]))

    def test_empty_spec_degenerates_to_gamma(self, grushin_sat):
        t, x, s, y = self.POINT
        spec = DerivativeSpec()
        assert grushin_sat.derivative(spec, t, x, s, y) == pytest.approx(
            grushin_sat.gamma(t, x, s, y), rel=1e-6)

    @pytest.mark.parametrize("word", [(1,), (2,), (1, 2), (2, 2)])
    def test_y_words_match_fd(self, grushin_sat, word):
        t, x, s, y = self.POINT
        rep = grushin_sat.derivative(DerivativeSpec(y_word=word), t, x, s, y)
        fd, err = fd_derivative(lambda ys: grushin_sat.gamma_tau(s - t, x, ys),
                                grushin_fields(), word, y)
        assert rep == pytest.approx(fd, rel=max(1e-6, 10 * err / max(abs(fd), 1e-300)))

    @pytest.mark.parametrize("word", [(1,), (2,)])
    def test_x_words_match_fd(self, grushin_sat, word):
        t, x, s, y = self.POINT
        rep = grushin_sat.derivative(DerivativeSpec(x_word=word), t, x, s, y)

        def fn(xs):
            return np.array([grushin_sat.gamma(t, xr, s, y)
                             for xr in np.atleast_2d(xs)])

        fd, err = fd_derivative(fn, grushin_fields(), word, x)
        assert rep == pytest.approx(fd, rel=max(1e-6, 10 * err / max(abs(fd), 1e-300)))

    def test_mixed_word_matches_nested_fd(self, grushin_sat):
        t, x, s, y = self.POINT
        rep = grushin_sat.derivative(
            DerivativeSpec(x_word=(1,), y_word=(1,)), t, x, s, y)

        def outer(xs):
            out = []
            for xr in np.atleast_2d(xs):
                v, _ = fd_derivative(lambda ys: grushin_sat.gamma_tau(s - t, xr, ys),
                                     grushin_fields(), (1,), y)
                out.append(v)
            return np.array(out)

        fd, _ = fd_derivative(outer, grushin_fields(), (1,), x)
        assert rep == pytest.approx(fd, rel=1e-5)

    def test_time_orders_and_sign(self, grushin_sat):
        t, x, s, y = self.POINT
        d_s = grushin_sat.derivative(DerivativeSpec(alpha=1), t, x, s, y)
        fd_s, _ = fd_time_derivative(lambda ss: grushin_sat.gamma(t, x, ss, y), s, 1)
        assert d_s == pytest.approx(fd_s, rel=1e-6)
        d_t = grushin_sat.derivative(DerivativeSpec(beta=1), t, x, s, y)
        assert d_t == pytest.approx(-d_s, rel=1e-6)

    def test_h_harmonic_off_pole(self, grushin_sat):
        # d_s Gamma = sum_j (X_j^y)^2 Gamma away from the pole
        t, x, s, y = self.POINT
        ds = grushin_sat.derivative(DerivativeSpec(alpha=1), t, x, s, y)
        lap = sum(grushin_sat.derivative(DerivativeSpec(y_word=(j, j)), t, x, s, y)
                  for j in (1, 2))
        assert ds == pytest.approx(lap, rel=1e-5)

    def test_invalid_inputs(self, grushin_sat):
        t, x, s, y = self.POINT
        with pytest.raises(ValueError):
            grushin_sat.derivative(DerivativeSpec(y_word=(7,)), t, x, s, y)
        with pytest.raises(PoleError):
            grushin_sat.derivative(DerivativeSpec(y_word=(1,)), 1.0, x, 0.5, y)
        with pytest.raises(NotImplementedError):
            DerivativeSpec(y_word=(1, 1, 1))
        with pytest.raises(NotImplementedError):
            DerivativeSpec(alpha=2, beta=1)
