"""Polynomial vector fields: brackets, homogeneity and rank checks, Lie closure.

A vector field on R^n is an n-tuple of polynomial coefficient functions,
``V = sum_i V_i(x) d/dx_i``.  The two structural hypotheses checked here:

* homogeneity: each generator is degree-1 homogeneous under the dilations
  ``x_i -> lam**sigma_i x_i`` (equivalently the i-th component has weighted
  degree ``sigma_i - 1``), and the generators are linearly independent in the
  vector space of fields;
* rank: iterated brackets evaluated at the origin span R^n, which by
  homogeneity settles the rank condition everywhere.

`lie_closure` grows an exact rational basis of the generated Lie algebra,
graded by homogeneity degree, together with its structure constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Sequence

from .poly import DEGREE_ANY, DilationWeights, Poly


class VectorField:
    """Polynomial vector field; ``components[i]`` multiplies d/dx_{i+1}."""

    __slots__ = ("components", "n")

    def __init__(self, components: Sequence[Poly]):
        comps = tuple(components)
        if not comps:
            raise ValueError("vector field needs at least one component")
        n = len(comps)
        if any(c.nvars != n for c in comps):
            raise ValueError("each component must be a polynomial in n variables")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "n", n)

    def __setattr__(self, name, value):
        raise AttributeError("VectorField is immutable")

    @staticmethod
    def from_strings(strings: Sequence[str]) -> "VectorField":
        n = len(strings)
        return VectorField([Poly.parse(s, n) for s in strings])

    @staticmethod
    def zero(n: int) -> "VectorField":
        return VectorField([Poly.zero(n)] * n)

    @staticmethod
    def coordinate(n: int, i: int) -> "VectorField":
        """The constant field d/dx_{i+1}."""
        comps = [Poly.zero(n)] * n
        comps[i] = Poly.const(n, 1)
        return VectorField(comps)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.components == other.components

    def __add__(self, other: "VectorField") -> "VectorField":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        return VectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self + other.scale(-1)

    def scale(self, c) -> "VectorField":
        return VectorField([p.scale(c) for p in self.components])

    def apply(self, f: Poly) -> Poly:
        """The derivation ``V f = sum_i V_i df/dx_i``."""
        if f.nvars != self.n:
            raise ValueError("function must live on the same space")
        out = Poly.zero(self.n)
        for i, v in enumerate(self.components):
            if not v.is_zero():
                out = out + v * f.partial(i)
        return out

    def at_zero(self) -> list[Fraction]:
        return [c.constant_term() for c in self.components]

    def at_point(self, point):
        return [c(point) for c in self.components]

    def homogeneity_degree(self, weights: DilationWeights):
        """Degree d such that the field is delta_lam-homogeneous of degree d.

        The i-th component must have weighted degree sigma_i - d; returns the
        common d as a Fraction, DEGREE_ANY for the zero field, None otherwise.
        """
        degs = set()
        for i, comp in enumerate(self.components):
            wd = comp.weighted_degree(weights)
            if wd is None:
                return None
            if wd is DEGREE_ANY:
                continue
            degs.add(weights[i] - wd)
        if not degs:
            return DEGREE_ANY
        if len(degs) > 1:
            return None
        return degs.pop()

    def format(self) -> str:
        parts = []
        for i, c in enumerate(self.components):
            if not c.is_zero():
                parts.append(f"({c.format()}) d{i + 1}")
        return " + ".join(parts) if parts else "0"

    def __repr__(self):
        return f"VectorField<{self.format()}>"


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """Commutator ``[X, Y] = X Y - Y X`` as a first-order operator (exact)."""
    if X.n != Y.n:
        raise ValueError(f"dimension mismatch: {X.n} vs {Y.n}")
    comps = []
    for i in range(X.n):
        comps.append(X.apply(Y.components[i]) - Y.apply(X.components[i]))
    return VectorField(comps)


# -- exact linear algebra over the monomial support -----------------------------


class RationalRowSpace:
    """Row space over Q in reduced echelon form, keyed by arbitrary coordinates.

    Supports exact membership tests and coordinate extraction for vectors
    given as {key: Fraction} dicts; used to decide linear independence of
    vector fields (keys are (slot, exponent-tuple) pairs).
    """

    def __init__(self):
        self.rows: list[dict] = []  # echelon rows
        self.pivots: list = []  # pivot key of each row
        self.history: list[list[Fraction]] = []  # row as combo of inserted vectors

    @staticmethod
    def _clean(vec: dict) -> dict:
        return {k: v for k, v in vec.items() if v != 0}

    def _eliminate(self, vec: dict, combo: list[Fraction]):
        vec = dict(vec)
        for row, pivot, hist in zip(self.rows, self.pivots, self.history):
            c = vec.get(pivot)
            if c:
                for k, v in row.items():
                    vec[k] = vec.get(k, Fraction(0)) - c * v
                for i, h in enumerate(hist):
                    combo[i] = combo[i] - c * h
        return self._clean(vec), combo

    def insert(self, vec: dict) -> bool:
        """Insert a vector; returns True if it enlarged the span."""
        m = len(self.history[0]) if self.history else 0
        combo = [Fraction(0)] * m + [Fraction(1)]
        for hist in self.history:
            hist.append(Fraction(0))
        residual, combo = self._eliminate(vec, combo)
        if not residual:
            for hist in self.history:
                hist.pop()
            return False
        pivot = min(residual)  # deterministic pivot choice
        scale = residual[pivot]
        residual = {k: v / scale for k, v in residual.items()}
        combo = [c / scale for c in combo]
        # back-substitute into existing rows to keep reduced form
        for row, hist in zip(self.rows, self.history):
            c = row.get(pivot)
            if c:
                for k, v in residual.items():
                    row[k] = row.get(k, Fraction(0)) - c * v
                for i in range(len(combo)):
                    hist[i] = hist[i] - c * combo[i]
        self.rows = [self._clean(r) for r in self.rows]
        self.rows.append(residual)
        self.pivots.append(pivot)
        self.history.append(combo)
        return True

    def coordinates(self, vec: dict) -> list[Fraction] | None:
        """Coordinates of ``vec`` in the span of the inserted vectors, or None."""
        m = len(self.history[0]) if self.history else 0
        combo = [Fraction(0)] * m
        residual, combo = self._eliminate(vec, combo)
        if residual:
            return None
        return [-c for c in combo]

    @property
    def rank(self) -> int:
        return len(self.rows)


def _field_vector(V: VectorField) -> dict:
    vec = {}
    for slot, comp in enumerate(V.components):
        for exps, c in comp.terms.items():
            vec[(slot, exps)] = c
    return vec


def fields_rank(fields: Sequence[VectorField]) -> int:
    """Exact rank of a family of fields in the vector space of fields."""
    space = RationalRowSpace()
    for V in fields:
        space.insert(_field_vector(V))
    return space.rank


# -- hypothesis checks ------------------------------------------------------------


@dataclass
class CheckReport:
    ok: bool
    violations: list[str] = dc_field(default_factory=list)

    def __bool__(self):
        return self.ok


def check_h1(fields: Sequence[VectorField], weights: DilationWeights) -> CheckReport:
    """Degree-1 homogeneity of every generator plus linear independence."""
    if not fields:
        raise ValueError("no vector fields given")
    n = fields[0].n
    violations: list[str] = []
    if len(weights) != n:
        raise ValueError("weights do not match the ambient dimension")
    for j, V in enumerate(fields):
        if V.n != n:
            raise ValueError("fields live on different spaces")
        for i, comp in enumerate(V.components):
            want = weights[i] - 1
            wd = comp.weighted_degree(weights)
            if wd is DEGREE_ANY:
                continue
            if wd is None or wd != want:
                got = "inhomogeneous" if wd is None else str(wd)
                violations.append(
                    f"field {j + 1} component {i + 1}: weighted degree {got}, needs {want}"
                )
    if fields_rank(fields) < len(fields):
        violations.append("generators are linearly dependent in the space of fields")
    return CheckReport(ok=not violations, violations=violations)


@dataclass
class RankReport:
    rank: int
    n: int
    witness: list[str]

    @property
    def ok(self) -> bool:
        return self.rank == self.n


def hormander_rank_at_zero(fields: Sequence[VectorField], max_length: int = 16) -> RankReport:
    """Rank at 0 of the span of iterated brackets, with witness bracket words.

    Breadth-first over bracket words; stops early once the rank reaches n or
    no new directions at 0 appear within the nilpotency bound.
    """
    n = fields[0].n
    current: list[tuple[VectorField, str]] = [
        (V, f"X{j + 1}") for j, V in enumerate(fields)
    ]
    seen: list[tuple[VectorField, str]] = list(current)
    space = RationalRowSpace()
    witness: list[str] = []
    for V, word in current:
        vec = {(i,): c for i, c in enumerate(V.at_zero()) if c != 0}
        if vec and space.insert(vec):
            witness.append(word)
    length = 1
    while space.rank < n and current and length < max_length:
        nxt: list[tuple[VectorField, str]] = []
        for gen, gw in [(V, f"X{j + 1}") for j, V in enumerate(fields)]:
            for W, word in current:
                B = lie_bracket(gen, W)
                if B.is_zero():
                    continue
                bword = f"[{gw},{word}]"
                nxt.append((B, bword))
                vec = {(i,): c for i, c in enumerate(B.at_zero()) if c != 0}
                if vec and space.insert(vec):
                    witness.append(bword)
        seen.extend(nxt)
        current = nxt
        length += 1
    return RankReport(rank=space.rank, n=n, witness=witness)


# -- Lie closure --------------------------------------------------------------------


class ClosureError(RuntimeError):
    pass


@dataclass
class GradedLieBasis:
    """Ordered basis E_1..E_N of Lie{X}, sorted by homogeneity degree.

    ``structure[(i, j)]`` holds the nonzero coefficients of [E_i, E_j] in the
    basis, as a dict {k: Fraction}; pairs with zero bracket are absent.
    Indices are 0-based.
    """

    elements: list[VectorField]
    degrees: list[Fraction]
    words: list[str]
    structure: dict[tuple[int, int], dict[int, Fraction]]
    weights: DilationWeights
    n_generators: int

    @property
    def dim(self) -> int:
        return len(self.elements)

    @property
    def step(self) -> Fraction:
        return max(self.degrees)

    def bracket_coeffs(self, i: int, j: int) -> dict[int, Fraction]:
        return self.structure.get((i, j), {})

    def check_structure(self) -> None:
        """Assert antisymmetry, grading, and the Jacobi identity exactly."""
        N = self.dim
        deg = self.degrees

        def c(i, j, k):
            return self.structure.get((i, j), {}).get(k, Fraction(0))

        for i in range(N):
            for j in range(N):
                for k in range(N):
                    if c(i, j, k) != -c(j, i, k):
                        raise ClosureError(f"antisymmetry fails at ({i},{j},{k})")
                    if c(i, j, k) != 0 and deg[k] != deg[i] + deg[j]:
                        raise ClosureError(f"grading fails at ({i},{j},{k})")
        for i in range(N):
            for j in range(i + 1, N):
                for k in range(j + 1, N):
                    for l in range(N):
                        total = Fraction(0)
                        for r in range(N):
                            total += c(i, j, r) * c(r, k, l)
                            total += c(j, k, r) * c(r, i, l)
                            total += c(k, i, r) * c(r, j, l)
                        if total != 0:
                            raise ClosureError(f"Jacobi fails at ({i},{j},{k},{l})")


def lie_closure(
    fields: Sequence[VectorField],
    weights: DilationWeights,
    cap: int = 64,
) -> GradedLieBasis:
    """Close the generators under brackets, keeping an exact rational basis.

    New directions are found breadth-first in bracket-word order; the basis is
    then stable-sorted by degree so structure constants are reproducible.
    Degree growth bounds termination: a homogeneous field of degree above
    ``max(sigma)`` has only negative-weight component degrees, hence is zero.
    The explicit cap guards against pathological input.
    """
    h1 = check_h1(fields, weights)
    if not h1.ok:
        raise ClosureError("(H.1) fails: " + "; ".join(h1.violations))
    space = RationalRowSpace()
    elements: list[VectorField] = []
    degrees: list[Fraction] = []
    words: list[str] = []

    def try_add(V: VectorField, word: str, degree: Fraction) -> bool:
        if V.is_zero():
            return False
        if not space.insert(_field_vector(V)):
            return False
        if len(elements) >= cap:
            raise ClosureError(
                f"Lie closure exceeded the cap N <= {cap}; input is likely "
                "non-nilpotent or mis-weighted"
            )
        elements.append(V)
        degrees.append(degree)
        words.append(word)
        return True

    for j, V in enumerate(fields):
        try_add(V, f"X{j + 1}", Fraction(1))

    frontier = list(range(len(elements)))
    while frontier:
        new_frontier: list[int] = []
        for i in range(len(fields)):
            for j in frontier:
                if i == j:
                    continue
                B = lie_bracket(elements[i], elements[j])
                if B.is_zero():
                    continue
                deg = degrees[i] + degrees[j]
                wd = B.homogeneity_degree(weights)
                if wd is not DEGREE_ANY and wd != deg:
                    raise ClosureError("bracket of homogeneous fields lost homogeneity")
                if try_add(B, f"[{words[i]},{words[j]}]", deg):
                    new_frontier.append(len(elements) - 1)
        frontier = new_frontier

    # brackets between non-generator elements can still produce new directions
    stable = False
    while not stable:
        stable = True
        N = len(elements)
        for i in range(N):
            for j in range(i + 1, N):
                B = lie_bracket(elements[i], elements[j])
                if B.is_zero():
                    continue
                if try_add(B, f"[{words[i]},{words[j]}]", degrees[i] + degrees[j]):
                    stable = False

    order = sorted(range(len(elements)), key=lambda k: degrees[k])  # stable
    elements = [elements[k] for k in order]
    degrees = [degrees[k] for k in order]
    words = [words[k] for k in order]

    # re-derive coordinates in the final ordering and collect structure constants
    final = RationalRowSpace()
    for V in elements:
        final.insert(_field_vector(V))
    structure: dict[tuple[int, int], dict[int, Fraction]] = {}
    N = len(elements)
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            B = lie_bracket(elements[i], elements[j])
            if B.is_zero():
                continue
            coords = final.coordinates(_field_vector(B))
            if coords is None:
                raise ClosureError("closure is not closed under brackets (internal)")
            nz = {k: c for k, c in enumerate(coords) if c != 0}
            if nz:
                structure[(i, j)] = nz

    basis = GradedLieBasis(
        elements=elements,
        degrees=degrees,
        words=words,
        structure=structure,
        weights=weights,
        n_generators=len(fields),
    )
    basis.check_structure()
    return basis
