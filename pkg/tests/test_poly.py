from fractions import Fraction

import numpy as np
import pytest

from heatlift.poly import DEGREE_ANY, DilationWeights, Poly, PolyMap, parse_poly


def x(i, n=2):
    return Poly.var(n, i)


class TestArithmetic:
    def test_additive_inverse_cancels(self):
        p = x(0)
        assert (p + (-p)).is_zero()

    def test_product_of_variables(self):
        assert x(0) * x(0) == Poly(2, {(2, 0): Fraction(1)})

    def test_scale(self):
        p = (x(0) * x(1)).scale(Fraction(3, 2))
        assert p.terms == {(1, 1): Fraction(3, 2)}

    def test_variable_count_mismatch(self):
        with pytest.raises(ValueError):
            Poly.var(2, 0) + Poly.var(3, 0)

    def test_power(self):
        p = x(0) + 1
        assert p**3 == p * p * p
        assert (p**0) == Poly.const(2, 1)

    def test_ring_axioms_random(self):
        rng = np.random.default_rng(3)

        def rand_poly():
            terms = {}
            for _ in range(rng.integers(1, 4)):
                e = tuple(int(k) for k in rng.integers(0, 3, size=2))
                terms[e] = Fraction(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
            return Poly(2, terms)

        for _ in range(25):
            a, b, c = rand_poly(), rand_poly(), rand_poly()
            assert (a * b) * c == a * (b * c)
            assert a * (b + c) == a * b + a * c
            assert a + b == b + a


class TestEvaluation:
    def test_exact_integer(self):
        assert (x(0) * x(1))([2, 3]) == 6
        assert isinstance((x(0) * x(1))([2, 3]), Fraction)

    def test_exact_fraction(self):
        p = Poly.var(1, 0) ** 2
        assert p([Fraction(1, 2)]) == Fraction(1, 4)

    def test_zero_everywhere(self):
        assert Poly.zero(3)([1.0, -2.0, 5.0]) == 0.0

    def test_float_path(self):
        v = (x(0) ** 2 + x(1))([0.5, 0.25])
        assert v == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            x(0)([1, 2, 3])


class TestCalculus:
    def test_partial_square(self):
        assert (x(0) ** 2).partial(0) == x(0).scale(2)

    def test_partial_absent_variable(self):
        assert x(0).partial(1).is_zero()

    def test_partial_product(self):
        assert (x(0) * x(1)).partial(0) == x(1)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            x(0).partial(5)


class TestGrading:
    w = DilationWeights([1, 2])

    def test_homogeneous_square(self):
        assert (x(0) ** 2).weighted_degree(self.w) == 2

    def test_weighted_variable(self):
        assert x(1).weighted_degree(self.w) == 2

    def test_inhomogeneous(self):
        assert (x(0) + x(1)).weighted_degree(self.w) is None

    def test_zero_polynomial_any_degree(self):
        assert Poly.zero(2).weighted_degree(self.w) is DEGREE_ANY

    def test_degree_additivity_is_exact(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            da, db = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            a = _random_homogeneous(rng, da)
            b = _random_homogeneous(rng, db)
            if a.is_zero() or b.is_zero():
                continue
            assert (a * b).weighted_degree(self.w) == da + db

    def test_dilation_scaling_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            d = int(rng.integers(1, 5))
            p = _random_homogeneous(rng, d)
            lam = Fraction(int(rng.integers(1, 7)), int(rng.integers(1, 5)))
            pt = [Fraction(int(rng.integers(-3, 4)), 2) for _ in range(2)]
            scaled = [lam ** int(s) * v for s, v in zip((1, 2), pt)]
            assert p(scaled) == lam**d * p(pt)


def _random_homogeneous(rng, degree):
    # weights (1, 2): monomials x1^a x2^b with a + 2b = degree
    terms = {}
    for b in range(degree // 2 + 1):
        a = degree - 2 * b
        if rng.random() < 0.6:
            terms[(a, b)] = Fraction(int(rng.integers(-4, 5)))
    return Poly(2, terms)


class TestTextForm:
    def test_examples(self):
        assert parse_poly("1", 2) == Poly.const(2, 1)
        assert parse_poly("x1", 3) == Poly.var(3, 0)
        p = parse_poly("-1/2 x1^2 x3", 3)
        assert p == Poly(3, {(2, 0, 1): Fraction(-1, 2)})

    def test_round_trip(self):
        p = Poly(3, {(2, 0, 1): Fraction(-1, 2), (0, 1, 0): Fraction(3),
                     (0, 0, 0): Fraction(7, 3)})
        assert parse_poly(p.format(), 3) == p

    def test_zero_form(self):
        assert Poly.zero(2).format() == "0"
        assert parse_poly("0", 2).is_zero()

    def test_star_separator(self):
        assert parse_poly("2 * x1 * x2", 2) == (x(0) * x(1)).scale(2)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            parse_poly("x9", 2)
        with pytest.raises(ValueError):
            parse_poly("2y + 1", 2)
        with pytest.raises(ValueError):
            parse_poly("", 2)


class TestDilationWeights:
    def test_valid(self):
        w = DilationWeights([1, 1, 2])
        assert w.homogeneous_dimension == 4

    def test_first_must_be_one(self):
        with pytest.raises(ValueError):
            DilationWeights([2, 3])

    def test_monotone(self):
        with pytest.raises(ValueError):
            DilationWeights([1, 3, 2])

    def test_rational_accepted(self):
        w = DilationWeights(["1", "3/2"])
        assert w[1] == Fraction(3, 2)

    def test_irrational_rejected(self):
        with pytest.raises(TypeError):
            DilationWeights([1, 2.5])  # floats are not exact weights

    def test_dilate_numeric(self):
        w = DilationWeights([1, 2])
        out = w.dilate(2.0, [1.0, 1.0])
        assert out == pytest.approx([2.0, 4.0])


class TestPolyMap:
    def test_batch_matches_exact(self):
        comps = [parse_poly("x1 x2 - 1/2 x1^2", 2), parse_poly("x2^3 + 2", 2)]
        m = PolyMap(comps)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(50, 2))
        vals = m(pts)
        for i in range(50):
            for j, c in enumerate(comps):
                assert vals[i, j] == pytest.approx(float(c(list(pts[i]))), rel=1e-13)

    def test_single_point(self):
        m = PolyMap([parse_poly("x1 + x2", 2)])
        assert m(np.array([1.0, 2.0])) == pytest.approx([3.0])
