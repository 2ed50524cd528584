"""Carnot-group construction and the global lifting of homogeneous fields.

Pipeline: a graded Lie basis E_1..E_N on R^n (from `fields.lie_closure`)
determines

* an abstract group law on R^N via the Baker-Campbell-Hausdorff series in
  exponential coordinates of the first kind (where the inverse is ``a -> -a``
  and dilations are diagonal),
* the evaluation submersion ``Phi(a) = exp(sum_k a_k E_k)(0)`` computed as an
  exact Lie series,
* split coordinates ``Theta(a) = (Phi(a), complementary slots)`` with a graded
  polynomial inverse found by weight-by-weight back-substitution,
* the transported law, dilations and left-invariant lifted fields
  ``Z_i = X_i + R_i`` on R^N = R^n_x x R^p_xi.

Every structural identity the analytic modules rely on (group axioms, graded
homogeneity, the lifting identity, triangularity of the remainders, the
convolution-map structure) is verified here as an exact polynomial identity;
`build_split_coordinates` refuses to return an unverified group.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .fields import GradedLieBasis, RationalRowSpace, VectorField, _field_vector, lie_bracket
from .poly import DEGREE_ANY, Poly, PolyMap

BCH_MAX_DEGREE = 6


class LiftError(RuntimeError):
    """A lifting construction or one of its exact verifications failed."""


class NoLiftingNeeded(LiftError):
    """N = n: the fields already generate a Carnot group on R^n."""


class FlowError(RuntimeError):
    """Lie-series flow did not terminate (input outside the graded span)."""


# -- Baker-Campbell-Hausdorff table ----------------------------------------------


@lru_cache(maxsize=None)
def bch_word_coefficients(max_degree: int) -> dict:
    """Rational coefficients of right-nested bracket words in the BCH series.

    Words are strings over {'A','B'}; the word ``w_1...w_M`` stands for the
    nested bracket [w_1,[w_2,[...,[w_{M-1},w_M]]]].  Coefficients come from
    Dynkin's formula, accumulated per word; generating them (instead of
    transcribing a printed table) keeps sign conventions honest, and the exact
    associativity check downstream would catch any slip.
    """
    if max_degree > BCH_MAX_DEGREE:
        raise LiftError(
            f"BCH truncation table supports degree <= {BCH_MAX_DEGREE}, got {max_degree}"
        )
    coeffs: dict[str, Fraction] = {}

    def rec(blocks: int, total: int, word: str, denom: int):
        for p in range(max_degree - total + 1):
            for q in range(max_degree - total - p + 1):
                if p + q == 0:
                    continue
                w = word + "A" * p + "B" * q
                t = total + p + q
                d = denom * math.factorial(p) * math.factorial(q)
                c = Fraction((-1) ** blocks, blocks + 1) * Fraction(1, t * d)
                coeffs[w] = coeffs.get(w, Fraction(0)) + c
                if t < max_degree:
                    rec(blocks + 1, t, w, d)

    rec(0, 0, "", 1)
    return {w: c for w, c in coeffs.items() if c != 0}


def _sc_bracket(u: list[Poly], v: list[Poly], structure, N: int) -> list[Poly]:
    """Bracket of algebra elements with polynomial coefficients."""
    nv = u[0].nvars
    out = [Poly.zero(nv) for _ in range(N)]
    for (i, j), row in structure.items():
        prod = u[i] * v[j]
        if prod.is_zero():
            continue
        for k, c in row.items():
            out[k] = out[k] + prod.scale(c)
    return out


def bch_group_law(basis: GradedLieBasis) -> tuple[list[Poly], list[Poly]]:
    """Group law and inverse on R^N in exponential coordinates of the first kind.

    Returns (law, inverse): law components are polynomials in 2N variables
    (a_1..a_N, b_1..b_N); the inverse is ``a -> -a``.  Brackets longer than the
    nilpotency step vanish, which truncates the series.
    """
    N = basis.dim
    step = int(math.floor(basis.step))
    A = [Poly.var(2 * N, k) for k in range(N)]
    B = [Poly.var(2 * N, N + k) for k in range(N)]
    law = [A[k] + B[k] for k in range(N)]
    if step >= 2:
        table = bch_word_coefficients(step)
        nested: dict[str, list[Poly]] = {"A": A, "B": B}

        def word_bracket(word: str) -> list[Poly]:
            if word not in nested:
                head, tail = word[0], word[1:]
                nested[word] = _sc_bracket(nested[head], word_bracket(tail), basis.structure, N)
            return nested[word]

        for word, c in table.items():
            if len(word) < 2 or len(word) > step:
                continue
            vec = word_bracket(word)
            law = [l + v.scale(c) for l, v in zip(law, vec)]
    inverse = [-Poly.var(N, k) for k in range(N)]
    return law, inverse


# -- exact flows -------------------------------------------------------------------


def lie_series_flow(components: Sequence[Poly], n: int, max_terms: int = 60) -> list[Poly]:
    """Time-1 flow of the field ``sum_l components[l] d/dx_l`` as polynomials.

    The components may involve extra parameter variables beyond the first n
    (which are the flowing coordinates).  Uses the exponential Lie series
    ``x_i(1) = sum_j (W^j x_i)/j!``, which terminates for graded fields
    because each application of W lowers the weighted x-degree.
    """
    nv = components[0].nvars
    if len(components) != n or any(c.nvars != nv for c in components):
        raise ValueError("need n components over a common variable count")

    def apply_w(f: Poly) -> Poly:
        out = Poly.zero(nv)
        for l in range(n):
            if not components[l].is_zero():
                out = out + components[l] * f.partial(l)
        return out

    flow = []
    for i in range(n):
        term = Poly.var(nv, i)
        total = term
        fact = 1
        for j in range(1, max_terms + 1):
            term = apply_w(term)
            if term.is_zero():
                break
            fact *= j
            total = total + term.scale(Fraction(1, fact))
        else:
            raise FlowError("Lie series did not terminate; field is not graded-nilpotent")
        flow.append(total)
    return flow


def flow_time_one(V: VectorField) -> PolyMap:
    """Exact polynomial time-1 flow map R^n -> R^n of a graded field."""
    return PolyMap(lie_series_flow(list(V.components), V.n))


def flow_with_time(V: VectorField) -> PolyMap:
    """Flow map (x, s) -> flow of V from x at time s, polynomial in both."""
    n = V.n
    comps = [c.extend(n + 1, 0) * Poly.var(n + 1, n) for c in V.components]
    return PolyMap(lie_series_flow(comps, n))


# -- exact rational matrix helpers ---------------------------------------------------


def _fraction_matrix_inverse(M: list[list[Fraction]]) -> list[list[Fraction]]:
    k = len(M)
    aug = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(k)]
           for i, row in enumerate(M)]
    for col in range(k):
        piv = next((r for r in range(col, k) if aug[r][col] != 0), None)
        if piv is None:
            raise LiftError("singular graded block while inverting coordinates")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = Fraction(1) / aug[col][col]
        aug[col] = [x * inv for x in aug[col]]
        for r in range(k):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [row[k:] for row in aug]


def _poly_matrix_det(M: list[list[Poly]]) -> Poly:
    k = len(M)
    if k == 1:
        return M[0][0]
    nv = M[0][0].nvars
    det = Poly.zero(nv)
    for j in range(k):
        if M[0][j].is_zero():
            continue
        minor = [[row[c] for c in range(k) if c != j] for row in M[1:]]
        cof = M[0][j] * _poly_matrix_det(minor)
        det = det + (cof if j % 2 == 0 else -cof)
    return det


# -- homogeneous norms ----------------------------------------------------------------


class HomogeneousNorms:
    """Canonical homogeneous norms S (base), nu (fiber), h = S + nu.

    The fiber norm is written ``nu`` to avoid colliding with the group
    dimension N.  All three scale linearly under the respective dilations.
    """

    def __init__(self, weights_x: Sequence[Fraction], weights_xi: Sequence[Fraction]):
        self.weights_x = tuple(Fraction(w) for w in weights_x)
        self.weights_xi = tuple(Fraction(w) for w in weights_xi)
        self._exp_x = np.array([1.0 / float(w) for w in self.weights_x])
        self._exp_xi = np.array([1.0 / float(w) for w in self.weights_xi])

    def S(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sum(np.abs(x) ** self._exp_x, axis=-1)

    def nu(self, xi) -> np.ndarray:
        if not self.weights_xi:
            return np.zeros(np.asarray(xi).shape[:-1])
        xi = np.asarray(xi, dtype=float)
        return np.sum(np.abs(xi) ** self._exp_xi, axis=-1)

    def h(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        n = len(self.weights_x)
        return self.S(pts[..., :n]) + self.nu(pts[..., n:])

    def nu_ball_volume(self) -> float:
        """Lebesgue volume of {nu <= 1}; Dirichlet integral in the exponents."""
        if not self.weights_xi:
            return 1.0
        p = len(self.weights_xi)
        log_v = p * math.log(2.0)
        for w in self.weights_xi:
            log_v += math.lgamma(1.0 + float(w))
        log_v -= math.lgamma(1.0 + sum(float(w) for w in self.weights_xi))
        return math.exp(log_v)


# -- the lifted group -------------------------------------------------------------------


class CarnotGroup:
    """Homogeneous Carnot group on R^N = R^n_x x R^p_xi in split coordinates.

    Carries the polynomial group law/inverse, the diagonal dilations, the
    lifted generators Z_i = X_i + R_i, the coordinate change Theta from
    exponential coordinates, and the convolution-type maps used by the
    saturation integral.  Instances are built by `build_split_coordinates`
    (or the trivial `abelian` constructor) and are immutable after that.
    """

    def __init__(self, **kw):
        self.n: int = kw["n"]
        self.p: int = kw["p"]
        self.N: int = kw["N"]
        self.m: int = kw["m"]
        self.step: Fraction = kw["step"]
        self.weights_x: tuple[Fraction, ...] = tuple(kw["weights_x"])
        self.weights_xi: tuple[Fraction, ...] = tuple(kw["weights_xi"])
        self.degrees: list[Fraction] = list(kw["degrees"])
        self.structure = kw["structure"]
        self.law: PolyMap = kw["law"]
        self.inverse: PolyMap = kw["inverse"]
        self.theta: PolyMap = kw["theta"]
        self.theta_inv: PolyMap = kw["theta_inv"]
        self.Z: list[VectorField] = kw["Z"]
        self.R: list[VectorField] = kw["R"]
        self.base_fields: list[VectorField] = kw["base_fields"]
        self.F: PolyMap = kw["F"]
        self.psi_q: list[Poly] = kw["psi_q"]
        self.psi_inv: PolyMap = kw["psi_inv"]
        self.F_straight: PolyMap = kw["F_straight"]
        self.phi: PolyMap = kw["phi"]
        self.det_theta: Fraction = kw["det_theta"]
        self.basis_words: list[str] = kw["basis_words"]
        self.report: dict = kw.get("report", {})
        self.q: Fraction = sum(self.weights_x, Fraction(0))
        self.q_star: Fraction = sum(self.weights_xi, Fraction(0))
        self.Q: Fraction = self.q + self.q_star
        self.norms = HomogeneousNorms(self.weights_x, self.weights_xi)
        self.split_weights: list[Fraction] = list(self.weights_x) + list(self.weights_xi)
        self._flows: dict[int, PolyMap] = {}

    # -- numeric group operations -------------------------------------------------

    def multiply(self, g, h) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        h = np.asarray(h, dtype=float)
        g, h = np.broadcast_arrays(g, h)
        return self.law(np.concatenate([g, h], axis=-1))

    def invert(self, g) -> np.ndarray:
        return self.inverse(np.asarray(g, dtype=float))

    def dilate(self, lam: float, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        factors = np.array([float(lam) ** float(w) for w in self.split_weights])
        return g * factors

    def conv_F(self, x, y, eta) -> np.ndarray:
        """F(x, y, eta) = (x,0)^{-1} * (y, eta), batched over any of the inputs."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        M = max(x.shape[0], y.shape[0], eta.shape[0])
        x = np.broadcast_to(x, (M, self.n))
        y = np.broadcast_to(y, (M, self.n))
        eta = np.broadcast_to(eta, (M, self.p))
        out = self.F(np.concatenate([x, y, eta], axis=-1))
        return out

    def psi(self, x, y, eta) -> np.ndarray:
        return self.conv_F(x, y, eta)[..., self.n:]

    def psi_inverse(self, x, y, eta_prime) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        ep = np.atleast_2d(np.asarray(eta_prime, dtype=float))
        M = max(x.shape[0], y.shape[0], ep.shape[0])
        x = np.broadcast_to(x, (M, self.n))
        y = np.broadcast_to(y, (M, self.n))
        ep = np.broadcast_to(ep, (M, self.p))
        return self.psi_inv(np.concatenate([x, y, ep], axis=-1))

    def straightened_point(self, x, y, u) -> np.ndarray:
        """F(x, y, Psi^{-1}_{x,y}(u)); its last p coordinates equal u."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        M = max(x.shape[0], y.shape[0], u.shape[0])
        x = np.broadcast_to(x, (M, self.n))
        y = np.broadcast_to(y, (M, self.n))
        u = np.broadcast_to(u, (M, self.p))
        return self.F_straight(np.concatenate([x, y, u], axis=-1))

    def phi_xy(self, x, y, u) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        M = max(x.shape[0], y.shape[0], u.shape[0])
        x = np.broadcast_to(x, (M, self.n))
        y = np.broadcast_to(y, (M, self.n))
        u = np.broadcast_to(u, (M, self.p))
        return self.phi(np.concatenate([x, y, u], axis=-1))

    def field_flow(self, i: int) -> PolyMap:
        """Exact flow map (g, s) -> exp(s Z_i)(g), cached per generator."""
        if i not in self._flows:
            self._flows[i] = flow_with_time(self.Z[i])
        return self._flows[i]

    @property
    def first_layer(self) -> list[int]:
        return [k for k, d in enumerate(self.degrees) if d == 1]

    @property
    def layer_indices(self) -> dict[Fraction, list[int]]:
        layers: dict[Fraction, list[int]] = {}
        for k, d in enumerate(self.degrees):
            layers.setdefault(d, []).append(k)
        return layers

    def describe(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "N": self.N,
            "m": self.m,
            "step": str(self.step),
            "q": str(self.q),
            "q_star": str(self.q_star),
            "Q": str(self.Q),
            "weights_x": [str(w) for w in self.weights_x],
            "weights_xi": [str(w) for w in self.weights_xi],
            "degrees": [str(d) for d in self.degrees],
            "basis_words": list(self.basis_words),
            "Z": [[c.format() for c in Zi.components] for Zi in self.Z],
        }

    # -- serialization ---------------------------------------------------------------

    def to_json(self) -> dict:
        def polys(ps):
            return [p.format() for p in ps]

        return {
            "format": "heatlift-group-v1",
            "n": self.n,
            "p": self.p,
            "N": self.N,
            "m": self.m,
            "step": str(self.step),
            "weights_x": [str(w) for w in self.weights_x],
            "weights_xi": [str(w) for w in self.weights_xi],
            "degrees": [str(d) for d in self.degrees],
            "structure": [
                [i, j, k, str(c)]
                for (i, j), row in sorted(self.structure.items())
                for k, c in sorted(row.items())
            ],
            "law": polys(self.law.components),
            "inverse": polys(self.inverse.components),
            "theta": polys(self.theta.components),
            "theta_inv": polys(self.theta_inv.components),
            "Z": [polys(Zi.components) for Zi in self.Z],
            "R": [polys(Ri.components) for Ri in self.R],
            "base_fields": [polys(X.components) for X in self.base_fields],
            "F": polys(self.F.components),
            "psi_q": polys(self.psi_q),
            "psi_inv": polys(self.psi_inv.components),
            "F_straight": polys(self.F_straight.components),
            "phi": polys(self.phi.components),
            "det_theta": str(self.det_theta),
            "basis_words": list(self.basis_words),
            "report": self.report,
        }

    @staticmethod
    def from_json(data: dict) -> "CarnotGroup":
        if data.get("format") != "heatlift-group-v1":
            raise ValueError("not a heatlift group JSON document")
        n, p, N = data["n"], data["p"], data["N"]

        def pmap(key, nv):
            return PolyMap([Poly.parse(s, nv) for s in data[key]])

        structure: dict[tuple[int, int], dict[int, Fraction]] = {}
        for i, j, k, c in data["structure"]:
            structure.setdefault((i, j), {})[k] = Fraction(c)
        Z = [VectorField([Poly.parse(s, N) for s in comps]) for comps in data["Z"]]
        R = [VectorField([Poly.parse(s, N) for s in comps]) for comps in data["R"]]
        base = [VectorField([Poly.parse(s, n) for s in comps]) for comps in data["base_fields"]]
        return CarnotGroup(
            n=n,
            p=p,
            N=N,
            m=data["m"],
            step=Fraction(data["step"]),
            weights_x=[Fraction(w) for w in data["weights_x"]],
            weights_xi=[Fraction(w) for w in data["weights_xi"]],
            degrees=[Fraction(d) for d in data["degrees"]],
            structure=structure,
            law=pmap("law", 2 * N),
            inverse=pmap("inverse", N),
            theta=pmap("theta", N),
            theta_inv=pmap("theta_inv", N),
            Z=Z,
            R=R,
            base_fields=base,
            F=pmap("F", 2 * n + p),
            psi_q=[Poly.parse(s, 2 * n + p) for s in data["psi_q"]],
            psi_inv=pmap("psi_inv", 2 * n + p),
            F_straight=pmap("F_straight", 2 * n + p),
            phi=pmap("phi", 2 * n + p),
            det_theta=Fraction(data["det_theta"]),
            basis_words=list(data["basis_words"]),
            report=data.get("report", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @staticmethod
    def loads(text: str) -> "CarnotGroup":
        return CarnotGroup.from_json(json.loads(text))

    # -- trivial product construction ---------------------------------------------------

    @staticmethod
    def abelian(n: int, p: int) -> "CarnotGroup":
        """The additive group on R^{n+p}: the trivial lift of the Euclidean
        heat operator on R^n by p extra coordinate directions."""
        N = n + p
        u = Poly.variables(2 * N)
        law = PolyMap([u[k] + u[N + k] for k in range(N)])
        a = Poly.variables(N)
        ident = PolyMap(list(a))
        inverse = PolyMap([-ak for ak in a])
        Z = [VectorField.coordinate(N, k) for k in range(N)]
        R = [VectorField.zero(N) for _ in range(n)] + [
            VectorField.coordinate(N, n + k) for k in range(p)
        ]
        base = [VectorField.coordinate(n, i) for i in range(n)] + [
            VectorField.zero(n) for _ in range(p)
        ]
        v = Poly.variables(2 * n + p)
        F = PolyMap([v[n + i] - v[i] for i in range(n)] + [v[2 * n + k] for k in range(p)])
        psi_inv = PolyMap([v[2 * n + k] for k in range(p)])
        phi = PolyMap([-v[2 * n + k] for k in range(p)])
        return CarnotGroup(
            n=n,
            p=p,
            N=N,
            m=N,
            step=Fraction(1),
            weights_x=[Fraction(1)] * n,
            weights_xi=[Fraction(1)] * p,
            degrees=[Fraction(1)] * N,
            structure={},
            law=law,
            inverse=inverse,
            theta=ident,
            theta_inv=ident,
            Z=Z,
            R=R,
            base_fields=base,
            F=F,
            psi_q=[Poly.zero(2 * n + p) for _ in range(p)],
            psi_inv=psi_inv,
            F_straight=F,
            phi=phi,
            det_theta=Fraction(1),
            basis_words=[f"X{k + 1}" for k in range(N)],
            report={"construction": "abelian product"},
        )


# -- the construction --------------------------------------------------------------------


def _left_invariant_fields(law: list[Poly], N: int) -> list[list[Poly]]:
    """J_k(a) = d(law(a, b))/db_k at b = 0, as polynomials in a."""
    zero_b = [Poly.var(N, k) for k in range(N)] + [Poly.zero(N)] * N
    fields = []
    for k in range(N):
        comps = []
        for j in range(N):
            d = law[j].partial(N + k)
            comps.append(d.subs(zero_b))
        fields.append(comps)
    return fields


def build_split_coordinates(basis: GradedLieBasis, verify: bool = True) -> CarnotGroup:
    """Build the lifted Carnot group in split coordinates (x, xi).

    Follows the construction documented in the module docstring and verifies
    the results exactly before returning.  Raises `NoLiftingNeeded` when
    N = n and `LiftError` on any inconsistency.
    """
    N = basis.dim
    n = basis.elements[0].n
    m = basis.n_generators
    if N == n:
        raise NoLiftingNeeded(
            "dim Lie{X} = n: the fields already span a Carnot group on R^n; no lifting needed"
        )
    if N < n:
        raise LiftError("dim Lie{X} < n cannot happen for a Hormander system")
    degrees = list(basis.degrees)
    if any(d.denominator != 1 for d in degrees):
        # rational weights are accepted symbolically, but flag them loudly
        flagged = True
    else:
        flagged = False

    law0, inv0 = bch_group_law(basis)

    # evaluation submersion Phi(a) = exp(sum a_k E_k)(0)
    nv = n + N  # x first, then a
    comps = []
    for l in range(n):
        c = Poly.zero(nv)
        for k, E in enumerate(basis.elements):
            c = c + E.components[l].extend(nv, 0) * Poly.var(nv, n + k)
        comps.append(c)
    flow = lie_series_flow(comps, n)
    at_zero = [Poly.zero(N)] * n + Poly.variables(N)
    phi_sub = [f.subs(at_zero) for f in flow]  # Phi components in a-variables

    for i, f in enumerate(phi_sub):
        wd = f.weighted_degree(degrees)
        if wd is not DEGREE_ANY and wd != basis.weights[i]:
            raise LiftError(f"Phi component {i + 1} is not graded (internal)")

    # slot selection: columns of dPhi_0 are E_k(0)
    cols = [E.at_zero() for E in basis.elements]
    space = RationalRowSpace()
    x_slots: list[int] = []
    xi_slots: list[int] = []
    for k in range(N):
        vec = {(i,): c for i, c in enumerate(cols[k]) if c != 0}
        if vec and space.insert(vec):
            x_slots.append(k)
        else:
            xi_slots.append(k)
    if len(x_slots) != n:
        raise LiftError("Hormander rank fails at 0: evaluation map is not a submersion")
    p = N - n
    weights_xi = [degrees[k] for k in xi_slots]

    theta_comps = phi_sub + [Poly.var(N, k) for k in xi_slots]
    theta = PolyMap(theta_comps)
    out_weights = list(basis.weights.sigma) + weights_xi

    theta_inv = _invert_graded_map(theta_comps, degrees, out_weights)

    # constant Jacobian determinant of the graded change of coordinates
    jac = [[theta_comps[j].partial(k).subs([Poly.zero(N)] * N) for k in range(N)]
           for j in range(N)]
    det_theta = _poly_matrix_det(jac).constant_term()
    if det_theta == 0:
        raise LiftError("coordinate change is singular (internal)")

    # transport the law, inverse, and left-invariant frame through Theta
    tinv_u = [c.extend(2 * N, 0) for c in theta_inv.components]
    tinv_v = [c.extend(2 * N, N) for c in theta_inv.components]
    law0_sub = [c.subs(tinv_u + tinv_v) for c in law0]
    law_split = PolyMap([t.subs(law0_sub) for t in theta_comps])
    inv0_sub = [-c for c in theta_inv.components]
    inverse_split = PolyMap([t.subs(inv0_sub) for t in theta_comps])

    J = _left_invariant_fields(law0, N)
    lifted_frame: list[VectorField] = []
    for k in range(N):
        comps_k = []
        for j in range(N):
            # (J_k Theta_j) o Theta^{-1}
            d = Poly.zero(N)
            for l in range(N):
                if not J[k][l].is_zero():
                    d = d + J[k][l] * theta_comps[j].partial(l)
            comps_k.append(d.subs(list(theta_inv.components)))
        lifted_frame.append(VectorField(comps_k))
    Z = lifted_frame[:m]

    # remainders act on the xi slots only; x-components must match the base fields
    R = []
    for i, Zi in enumerate(Z):
        Xi = basis.elements[i]
        r_comps = []
        for j in range(N):
            if j < n:
                if Zi.components[j] != Xi.components[j].extend(N, 0):
                    raise LiftError(
                        f"lifting identity fails: Z_{i + 1} x-component {j + 1} "
                        f"differs from X_{i + 1}"
                    )
                r_comps.append(Poly.zero(N))
            else:
                r_comps.append(Zi.components[j])
        R.append(VectorField(r_comps))

    # convolution map F(x, y, eta) = (x,0)^{-1} * (y, eta) in 2n + p variables
    mv = 2 * n + p
    x_vars = [Poly.var(mv, i) for i in range(n)]
    y_vars = [Poly.var(mv, n + i) for i in range(n)]
    e_vars = [Poly.var(mv, 2 * n + k) for k in range(p)]
    x0 = x_vars + [Poly.zero(mv)] * p
    inv_x0 = [c.subs(x0) for c in inverse_split.components]
    F_comps = [c.subs(inv_x0 + y_vars + e_vars) for c in law_split.components]
    F = PolyMap(F_comps)

    psi_q = [F_comps[n + k] - e_vars[k] for k in range(p)]
    psi_inv = _invert_psi(F_comps, n, p)
    # F with eta = Psi^{-1}(u): last p components collapse to u by construction
    F_straight = PolyMap(
        [c.subs(x_vars + y_vars + list(psi_inv.components)) for c in F_comps]
    )

    # phi_{x,y}(u) = pi_p((x,0) * (x,u)^{-1} * (y,0))
    xu = x_vars + e_vars
    inv_xu = [c.subs(xu) for c in inverse_split.components]
    prod1 = [c.subs(x0 + inv_xu) for c in law_split.components]
    y0 = y_vars + [Poly.zero(mv)] * p
    prod2 = [c.subs(prod1 + y0) for c in law_split.components]
    phi = PolyMap(prod2[n:])

    group = CarnotGroup(
        n=n,
        p=p,
        N=N,
        m=m,
        step=basis.step,
        weights_x=basis.weights.sigma,
        weights_xi=weights_xi,
        degrees=degrees,
        structure=basis.structure,
        law=law_split,
        inverse=inverse_split,
        theta=theta,
        theta_inv=theta_inv,
        Z=Z,
        R=R,
        base_fields=list(basis.elements[:m]),
        F=F,
        psi_q=psi_q,
        psi_inv=psi_inv,
        F_straight=F_straight,
        phi=phi,
        det_theta=det_theta,
        basis_words=list(basis.words),
        report={},
    )
    group.report["weights_flagged_non_integer"] = flagged
    if verify:
        group.report.update(verify_group(group, lifted_frame))
    return group


def _invert_graded_map(
    comps: list[Poly], in_degrees: list[Fraction], out_weights: list[Fraction]
) -> PolyMap:
    """Invert a graded polynomial map by back-substitution in increasing weight.

    Each weight-w output equals a linear form in the weight-w inputs plus a
    polynomial in strictly lower-weight inputs, so the blocks solve in order.
    """
    N = len(comps)
    u_vars = Poly.variables(N)
    solved: dict[int, Poly] = {}
    for w in sorted(set(in_degrees)):
        unknowns = [k for k in range(N) if in_degrees[k] == w]
        outputs = [j for j in range(N) if out_weights[j] == w]
        if len(unknowns) != len(outputs):
            raise LiftError("graded blocks are not square (internal)")
        L = []
        for j in outputs:
            row = []
            for k in unknowns:
                e = tuple(1 if i == k else 0 for i in range(N))
                row.append(comps[j].terms.get(e, Fraction(0)))
            L.append(row)
        Linv = _fraction_matrix_inverse(L)
        rhs = []
        for j in outputs:
            lin = Poly(N, {tuple(1 if i == k else 0 for i in range(N)):
                           comps[j].terms.get(tuple(1 if i == k else 0 for i in range(N)),
                                              Fraction(0))
                           for k in unknowns})
            H = comps[j] - lin
            for exps in H.terms:
                for k, e in enumerate(exps):
                    if e > 0 and in_degrees[k] >= w:
                        raise LiftError("graded structure violated (internal)")
            subs_vals = [solved.get(k, Poly.zero(N)) for k in range(N)]
            rhs.append(u_vars[j] - H.subs(subs_vals))
        for row_idx, k in enumerate(unknowns):
            expr = Poly.zero(N)
            for col_idx in range(len(outputs)):
                c = Linv[row_idx][col_idx]
                if c != 0:
                    expr = expr + rhs[col_idx].scale(c)
            solved[k] = expr
    return PolyMap([solved[k] for k in range(N)])


def _invert_psi(F_comps: list[Poly], n: int, p: int) -> PolyMap:
    """Invert eta -> (F_{n+1}, ..., F_{n+p}) by forward substitution.

    The k-th component is eta_k + q_k(x, y, eta_1..eta_{k-1}), so in the
    primed variables eta_k = eta'_k - q_k(x, y, eta_1..eta_{k-1}).
    """
    mv = 2 * n + p
    vars_all = Poly.variables(mv)
    solved: list[Poly] = []
    for k in range(p):
        qk = F_comps[n + k] - vars_all[2 * n + k]
        for exps in qk.terms:
            for j in range(2 * n + k, mv):
                if exps[j] > 0:
                    raise LiftError("convolution map is not triangular (internal)")
        subs_vals = vars_all[: 2 * n] + solved + vars_all[2 * n + len(solved):]
        solved.append(vars_all[2 * n + k] - qk.subs(subs_vals))
    return PolyMap(solved)


# -- exact verification ---------------------------------------------------------------------


def verify_group(group: CarnotGroup, lifted_frame: list[VectorField] | None = None) -> dict:
    """Run the exact polynomial identity checks; raises LiftError on failure.

    Returns a dict summarising what was verified (all entries True on
    success), which `cmd_lift` embeds in its report.
    """
    N, n, p = group.N, group.n, group.p
    law, inv = group.law.components, group.inverse.components
    u = Poly.variables(N)
    zero = [Poly.zero(N)] * N
    checks: dict[str, bool] = {}

    def require(name: str, ok: bool):
        if not ok:
            raise LiftError(f"group verification failed: {name}")
        checks[name] = True

    # identity and inverse
    require("identity_right", [c.subs(u + zero) for c in law] == u)
    require("identity_left", [c.subs(zero + u) for c in law] == u)
    require(
        "inverse",
        all(c.subs(u + list(inv)).is_zero() for c in law),
    )

    # associativity as an exact identity in 3N variables
    g3 = Poly.variables(3 * N)
    a, b, c3 = g3[:N], g3[N: 2 * N], g3[2 * N:]
    ab = [l.subs(a + b) for l in law]
    bc = [l.subs(b + c3) for l in law]
    require(
        "associativity",
        [l.subs(ab + c3) for l in law] == [l.subs(a + bc) for l in law],
    )

    # dilations are automorphisms <=> each law component is graded of its weight
    w_split = group.split_weights
    w2 = w_split + w_split
    require(
        "dilation_automorphism",
        all(
            l.weighted_degree(w2) in (DEGREE_ANY, w_split[j])
            for j, l in enumerate(law)
        ),
    )
    require(
        "inverse_graded",
        all(
            iv.weighted_degree(w_split) in (DEGREE_ANY, w_split[j])
            for j, iv in enumerate(inv)
        ),
    )

    # lifted generators: degree-1 homogeneity and left invariance
    for i, Zi in enumerate(group.Z):
        require(
            f"Z{i + 1}_degree_one",
            all(
                comp.weighted_degree(w_split) in (DEGREE_ANY, w_split[j] - 1)
                for j, comp in enumerate(Zi.components)
            ),
        )
    gh = Poly.variables(2 * N)
    g_, h_ = gh[:N], gh[N:]
    for i, Zi in enumerate(group.Z):
        # dL_g(Z(h)) = Z(g * h): sum_k Z_k(h) d(law_j)/dh_k == Z_j o law
        Z_at_h = [comp.subs(h_) for comp in Zi.components]
        for j in range(N):
            rhs = Poly.zero(2 * N)
            for k in range(N):
                if not Z_at_h[k].is_zero():
                    rhs = rhs + Z_at_h[k] * law[j].partial(N + k)
            zi_of_law = Zi.components[j].subs(list(law))
            if zi_of_law != rhs:
                raise LiftError(f"left invariance fails for Z_{i + 1} component {j + 1}")
    checks["left_invariance"] = True

    # lifting identity on monomials of weighted degree <= step
    step = group.step
    monos = _monomials_up_to(n, group.weights_x, step)
    for i, Zi in enumerate(group.Z):
        Xi = group.base_fields[i]
        for f in monos:
            lhs = Zi.apply(f.extend(N, 0))
            rhs = Xi.apply(f).extend(N, 0)
            if lhs != rhs:
                raise LiftError(
                    f"lifting identity fails for Z_{i + 1} on monomial {f.format()}"
                )
    checks["lifting_identity_monomials"] = True

    # remainder triangularity and homogeneity (degree sigma*_k - 1 coefficients)
    for i, Ri in enumerate(group.R):
        for j in range(n):
            require(f"R{i + 1}_acts_on_xi_only", Ri.components[j].is_zero())
        for k in range(p):
            comp = Ri.components[n + k]
            if comp.depends_on(n + k):
                raise LiftError(f"remainder R_{i + 1} coefficient depends on its own xi_{k + 1}")
            for exps in comp.terms:
                for jv, e in enumerate(exps):
                    if e > 0 and w_split[jv] >= group.weights_xi[k]:
                        raise LiftError(
                            f"remainder R_{i + 1} coefficient of d/dxi_{k + 1} uses a "
                            "variable of weight >= sigma*_k"
                        )
            require(
                f"R{i + 1}_xi{k + 1}_graded",
                comp.weighted_degree(w_split) in (DEGREE_ANY, group.weights_xi[k] - 1),
            )
    checks["remainder_triangular"] = True

    # bracket transport: structure constants of the lifted frame match exactly
    if lifted_frame is not None:
        space = RationalRowSpace()
        for E in lifted_frame:
            space.insert(_field_vector(E))
        for i in range(N):
            for j in range(N):
                B = lie_bracket(lifted_frame[i], lifted_frame[j])
                expect = group.structure.get((i, j), {})
                if B.is_zero():
                    if expect:
                        raise LiftError("bracket transport: unexpected zero bracket")
                    continue
                coords = space.coordinates(_field_vector(B))
                if coords is None:
                    raise LiftError("bracket transport: bracket outside the frame span")
                got = {k: c for k, c in enumerate(coords) if c != 0}
                if got != expect:
                    raise LiftError(f"structure constants differ at ({i}, {j})")
        checks["bracket_transport"] = True

    # convolution-map structure (component form, vanishing at x = 0, grading)
    mv = 2 * n + p
    w_xyeta = list(group.weights_x) * 2 + list(group.weights_xi)
    Fc = group.F.components
    at_x0 = [Poly.zero(mv)] * n + Poly.variables(mv)[n:]
    for i in range(n):
        pi = Fc[i] - (Poly.var(mv, n + i) - Poly.var(mv, i))
        require(f"F{i + 1}_vanishes_at_x0", pi.subs(at_x0).is_zero())
        for exps in pi.terms:
            for jv, e in enumerate(exps):
                if e > 0 and w_xyeta[jv] >= group.weights_x[i]:
                    raise LiftError(f"F_{i + 1} correction uses weight >= sigma_{i + 1}")
    for k in range(p):
        qk = group.psi_q[k]
        require(f"q{k + 1}_vanishes_at_x0", qk.subs(at_x0).is_zero())
        for exps in qk.terms:
            for jv, e in enumerate(exps):
                if e > 0 and w_xyeta[jv] >= group.weights_xi[k]:
                    raise LiftError(f"q_{k + 1} uses weight >= sigma*_{k + 1}")
    checks["conv_map_structure"] = True

    # Psi round trip and unit Jacobian
    vars_all = Poly.variables(mv)
    psi_of_inv = [
        Fc[n + k].subs(vars_all[: 2 * n] + list(group.psi_inv.components))
        for k in range(p)
    ]
    require("psi_round_trip", psi_of_inv == vars_all[2 * n:])
    jpsi = [[Fc[n + j].partial(2 * n + k) for k in range(p)] for j in range(p)]
    require("psi_unit_jacobian", _poly_matrix_det(jpsi) == Poly.const(mv, 1))

    # straightened fiber: last p components of F(x, y, Psi^{-1}(u)) equal u
    require(
        "straightened_fiber",
        list(group.F_straight.components[n:]) == vars_all[2 * n:],
    )

    # phi_{x,y}: defining identity and unimodular Jacobian
    xv, yv, uv = vars_all[:n], vars_all[n: 2 * n], vars_all[2 * n:]
    lhs = [c.subs(xv + yv + list(group.phi.components)) for c in Fc]
    inv_xu = [c.subs(xv + uv) for c in group.inverse.components]
    rhs = [c.subs(inv_xu + yv + [Poly.zero(mv)] * p) for c in group.law.components]
    require("phi_defining_identity", lhs == rhs)
    jphi = [[group.phi.components[j].partial(2 * n + k) for k in range(p)] for j in range(p)]
    det_phi = _poly_matrix_det(jphi)
    require("phi_unit_jacobian", det_phi in (Poly.const(mv, 1), Poly.const(mv, -1)))

    # Theta round trips
    tt = [c.subs(list(group.theta_inv.components)) for c in group.theta.components]
    require("theta_round_trip", tt == Poly.variables(N))
    tt2 = [c.subs(list(group.theta.components)) for c in group.theta_inv.components]
    require("theta_inv_round_trip", tt2 == Poly.variables(N))

    return checks


def _monomials_up_to(n: int, weights: Sequence[Fraction], max_degree: Fraction) -> list[Poly]:
    """All monomials in n variables of weighted degree in (0, max_degree]."""
    out: list[Poly] = []

    def rec(i: int, exps: list[int], deg: Fraction):
        if i == n:
            if deg > 0:
                out.append(Poly(n, {tuple(exps): Fraction(1)}))
            return
        e = 0
        while deg + e * weights[i] <= max_degree:
            rec(i + 1, exps + [e], deg + e * weights[i])
            e += 1

    rec(0, [], Fraction(0))
    return out
