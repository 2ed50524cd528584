import numpy as np
import pytest

from heatlift.cauchy import (BoundedInitialDatum, constant_datum, gaussian_datum,
                             potential_lambda, reproduction_check, smooth_bump,
                             solve_cauchy, tabulated_datum)
from heatlift.oracle import fd_cauchy_solver, grid_lookup


class TestDatum:
    def test_bound_enforced(self):
        bad = BoundedInitialDatum(lambda pts: 2.0 * np.ones(len(pts)), bound=1.0)
        with pytest.raises(ValueError):
            bad(np.zeros((3, 2)))

    def test_tabulated_round_trip(self):
        xs = np.linspace(-2, 2, 21)
        vals = np.exp(-np.add.outer(xs**2, xs**2))
        datum = tabulated_datum({"box": [[-2, 2], [-2, 2]], "values": vals.tolist()})
        assert datum(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.0, rel=1e-12)
        assert datum(np.array([[5.0, 0.0]]))[0] == 0.0
        assert datum.bound == pytest.approx(1.0)


class TestCauchy:
    def test_constant_one_propagates(self, grushin_sat):
        u = solve_cauchy(grushin_sat, constant_datum(1.0, 2), 0.5, [0.3, -0.2])
        assert u == pytest.approx(1.0, abs=2e-5)

    def test_zero_datum(self, grushin_sat):
        assert solve_cauchy(grushin_sat, constant_datum(0.0, 2), 0.5, [0.1, 0.2]) == 0.0

    def test_positive_time_required(self, grushin_sat):
        with pytest.raises(ValueError):
            solve_cauchy(grushin_sat, gaussian_datum(2), 0.0, [0.0, 0.0])

    def test_linearity(self, grushin_sat):
        x = [0.2, 0.4]
        g = gaussian_datum(2)
        combo = BoundedInitialDatum(
            lambda pts: 0.5 + 0.25 * np.exp(-np.sum(pts**2, axis=-1)), bound=0.75)
        u_combo = solve_cauchy(grushin_sat, combo, 0.5, x)
        u_one = solve_cauchy(grushin_sat, constant_datum(1.0, 2), 0.5, x)
        u_g = solve_cauchy(grushin_sat, g, 0.5, x)
        assert u_combo == pytest.approx(0.5 * u_one + 0.25 * u_g, rel=1e-4)

    def test_maximum_principle(self, grushin_sat):
        g = gaussian_datum(2)
        for t in (0.1, 0.5, 2.0):
            u = solve_cauchy(grushin_sat, g, t, [0.5, -0.3])
            assert abs(u) <= 1.0 + 1e-6

    def test_matches_fd_solver(self, grushin_sat):
        probes = [(0.0, 0.0), (0.5, 0.25)]
        u_vals = [solve_cauchy(grushin_sat, gaussian_datum(2), 0.5, p)
                  for p in probes]
        axes, U = fd_cauchy_solver([(-6, 6), (-6, 6)], (201, 201),
                                   lambda m: np.exp(-(m[0] ** 2 + m[1] ** 2)), 0.5)
        for p, u in zip(probes, u_vals):
            assert u == pytest.approx(grid_lookup(axes, U, p), rel=5e-3)

    def test_initial_trace_trend(self, grushin_sat):
        x = np.array([0.5, 0.25])
        phi = gaussian_datum(2)
        target = float(phi(x[None, :])[0])
        errs = [abs(solve_cauchy(grushin_sat, phi, t, x) - target)
                for t in (0.1, 0.03, 0.01)]
        assert errs[0] > errs[1] > errs[2]


class TestReproduction:
    def test_gaussian_semigroup_exact(self, abelian_sat):
        lhs, rhs, _ = reproduction_check(abelian_sat, [0.3], [(-0.4)], 0.5, 0.75)
        assert rhs == pytest.approx(lhs, rel=1e-6)

    def test_grushin_identity(self, grushin_sat):
        lhs, rhs, _ = reproduction_check(grushin_sat, [0.0, 0.0], [0.0, 0.0],
                                         0.5, 0.5)
        assert rhs == pytest.approx(lhs, rel=1e-4)

    def test_short_time_limit_trend(self, grushin_sat):
        # rhs -> Gamma(0, y; s, x) as t -> 0+
        x, y, s = [0.4, 0.1], [-0.2, 0.3], 0.5
        gaps = []
        for t in (0.03, 0.01):
            _, rhs, _ = reproduction_check(grushin_sat, x, y, s, t)
            target = grushin_sat.gamma(0.0, y, s + t, x)
            gaps.append(abs(rhs - target) / target)
        assert gaps[1] < gaps[0]
        assert gaps[1] < 5e-2

    def test_positive_times_required(self, grushin_sat):
        with pytest.raises(ValueError):
            reproduction_check(grushin_sat, [0, 0], [0, 0], 0.5, 0.0)


class TestPotential:
    def test_zero_density(self, grushin_sat):
        bump = smooth_bump((0.0, 0.5), [(-0.75, 0.75), (-0.75, 0.75)])
        zero = smooth_bump((0.0, 0.5), [(-0.75, 0.75), (-0.75, 0.75)])
        zero.func = lambda ts, xs: np.zeros(len(np.atleast_2d(xs)))
        assert potential_lambda(grushin_sat, zero, (1.0, [0.2, 0.1])) == 0.0

    def test_vanishes_before_support(self, grushin_sat):
        bump = smooth_bump((0.5, 1.0), [(-0.75, 0.75), (-0.75, 0.75)])
        assert potential_lambda(grushin_sat, bump, (0.25, [0.0, 0.0])) == 0.0

    def test_decay_along_diverging_points(self, grushin_sat):
        bump = smooth_bump((0.0, 0.5), [(-0.75, 0.75), (-0.75, 0.75)])
        vals = [potential_lambda(grushin_sat, bump, (1.0, [k, 0.0]))
                for k in (1.0, 3.0, 6.0)]
        assert vals[0] > vals[1] > vals[2] >= 0.0
        assert vals[2] < 1e-3 * vals[0]

    def test_pde_residual_at_interior_point(self, grushin_sat):
        # H Lambda_phi = -phi with H = d^2_{y1} + y1^2 d^2_{y2} - d_s
        bump = smooth_bump((0.0, 0.5), [(-0.75, 0.75), (-0.75, 0.75)])
        s0, y0 = 0.25, np.array([0.2, 0.1])
        h = 0.05

        def lam(s, y):
            return potential_lambda(grushin_sat, bump, (s, list(y)))

        base = lam(s0, y0)
        d2_1 = (lam(s0, y0 + [h, 0]) - 2 * base + lam(s0, y0 - [h, 0])) / h**2
        d2_2 = (lam(s0, y0 + [0, h]) - 2 * base + lam(s0, y0 - [0, h])) / h**2
        d_s = (lam(s0 + h, y0) - lam(s0 - h, y0)) / (2 * h)
        residual = d2_1 + y0[0] ** 2 * d2_2 - d_s
        phi_val = float(bump(s0, y0[None, :])[0])
        assert residual == pytest.approx(-phi_val, rel=1e-2)
