"""Exact multivariate polynomial arithmetic over the rationals.

Polynomials carry a dilation-weight grading: the anisotropic scalings
``x_i -> lam**sigma_i x_i`` assign the monomial ``x**alpha`` the weighted
degree ``sum(alpha_i * sigma_i)``.  Everything symbolic in this package
(vector fields, group laws, lifting maps) is built from these polynomials,
so coefficients stay exact `Fraction`s; floats only appear at the numeric
evaluation boundary.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

Exponents = tuple[int, ...]

#: degree reported for the zero polynomial, which is homogeneous of every degree
DEGREE_ANY = "any"


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"coefficient must be rational, got {type(c).__name__}")


class Poly:
    """A polynomial in ``nvars`` variables with rational coefficients.

    Terms are a dict mapping exponent tuples (length ``nvars``, non-negative
    ints) to nonzero `Fraction` coefficients.  Instances are immutable; all
    operations return new objects.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: dict[Exponents, Fraction] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be non-negative")
        clean: dict[Exponents, Fraction] = {}
        for exps, c in (terms or {}).items():
            c = _as_fraction(c)
            if c == 0:
                continue
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError(f"exponent tuple {exps} does not match nvars={nvars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            clean[exps] = clean.get(exps, Fraction(0)) + c
        object.__setattr__(self, "nvars", nvars)
        object.__setattr__(self, "terms", {e: c for e, c in clean.items() if c != 0})

    def __setattr__(self, name, value):
        raise AttributeError("Poly is immutable")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def zero(nvars: int) -> "Poly":
        return Poly(nvars)

    @staticmethod
    def const(nvars: int, c) -> "Poly":
        return Poly(nvars, {(0,) * nvars: _as_fraction(c)})

    @staticmethod
    def var(nvars: int, i: int) -> "Poly":
        """The coordinate polynomial x_{i+1} (0-based index ``i``)."""
        if not 0 <= i < nvars:
            raise IndexError(f"variable index {i} out of range for nvars={nvars}")
        exps = tuple(1 if j == i else 0 for j in range(nvars))
        return Poly(nvars, {exps: Fraction(1)})

    @staticmethod
    def variables(nvars: int) -> list["Poly"]:
        return [Poly.var(nvars, i) for i in range(nvars)]

    # -- predicates ----------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(all(e == 0 for e in exps) for exps in self.terms)

    def constant_term(self) -> Fraction:
        return self.terms.get((0,) * self.nvars, Fraction(0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __bool__(self) -> bool:
        return not self.is_zero()

    # -- ring operations -----------------------------------------------------

    def _check_compat(self, other: "Poly"):
        if self.nvars != other.nvars:
            raise ValueError(f"variable-count mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other) -> "Poly":
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.nvars, other)
        self._check_compat(other)
        terms = dict(self.terms)
        for exps, c in other.terms.items():
            terms[exps] = terms.get(exps, Fraction(0)) + c
        return Poly(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other) -> "Poly":
        if isinstance(other, (int, Fraction)):
            other = Poly.const(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other) -> "Poly":
        return (-self) + other

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        self._check_compat(other)
        terms: dict[Exponents, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, Fraction(0)) + c1 * c2
        return Poly(self.nvars, terms)

    __rmul__ = __mul__

    def scale(self, c) -> "Poly":
        c = _as_fraction(c)
        return Poly(self.nvars, {e: c * v for e, v in self.terms.items()})

    def __pow__(self, k: int) -> "Poly":
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        out = Poly.const(self.nvars, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    # -- calculus ------------------------------------------------------------

    def partial(self, i: int) -> "Poly":
        """Formal partial derivative with respect to variable ``i`` (0-based)."""
        if not 0 <= i < self.nvars:
            raise IndexError(f"variable index {i} out of range for nvars={self.nvars}")
        terms: dict[Exponents, Fraction] = {}
        for exps, c in self.terms.items():
            if exps[i] == 0:
                continue
            e = list(exps)
            e[i] -= 1
            terms[tuple(e)] = terms.get(tuple(e), Fraction(0)) + c * exps[i]
        return Poly(self.nvars, terms)

    # -- evaluation and substitution ------------------------------------------

    def __call__(self, point: Sequence):
        """Evaluate at a point; exact if all entries are int/Fraction."""
        if len(point) != self.nvars:
            raise ValueError(f"point length {len(point)} != nvars {self.nvars}")
        exact = all(isinstance(v, (int, Fraction)) for v in point)
        total = Fraction(0) if exact else 0.0
        for exps, c in self.terms.items():
            term = c if exact else float(c)
            for v, e in zip(point, exps):
                if e:
                    term = term * v**e
            total = total + term
        return total

    def subs(self, values: Sequence["Poly"]) -> "Poly":
        """Substitute polynomial ``values[i]`` for variable ``i``.

        All values must share a common variable count, which becomes the
        variable count of the result.
        """
        if len(values) != self.nvars:
            raise ValueError("substitution needs one polynomial per variable")
        if not values:
            return Poly(0, dict(self.terms))
        m = values[0].nvars
        if any(v.nvars != m for v in values):
            raise ValueError("substituted polynomials must share a variable count")
        out = Poly.zero(m)
        # cache powers per variable to avoid repeated multiplication
        powers: list[dict[int, Poly]] = [{0: Poly.const(m, 1)} for _ in range(self.nvars)]

        def power(i: int, k: int) -> Poly:
            cache = powers[i]
            if k not in cache:
                cache[k] = power(i, k - 1) * values[i]
            return cache[k]

        for exps, c in self.terms.items():
            term = Poly.const(m, c)
            for i, e in enumerate(exps):
                if e:
                    term = term * power(i, e)
            out = out + term
        return out

    def extend(self, nvars: int, offset: int = 0) -> "Poly":
        """Re-embed into a ring with ``nvars`` variables, shifting by ``offset``."""
        if offset + self.nvars > nvars:
            raise ValueError("extension does not fit")
        pad_l = (0,) * offset
        pad_r = (0,) * (nvars - offset - self.nvars)
        return Poly(nvars, {pad_l + e + pad_r: c for e, c in self.terms.items()})

    # -- grading ---------------------------------------------------------------

    def weighted_degree(self, weights: "DilationWeights | Sequence[Fraction]"):
        """Common weighted degree of all monomials.

        Returns the degree as a `Fraction` when the polynomial is homogeneous,
        `DEGREE_ANY` for the zero polynomial, and ``None`` when monomials
        disagree.
        """
        sigma = weights.sigma if isinstance(weights, DilationWeights) else tuple(weights)
        if len(sigma) != self.nvars:
            raise ValueError("weights do not match variable count")
        if self.is_zero():
            return DEGREE_ANY
        degs = {sum(e * s for e, s in zip(exps, sigma)) for exps in self.terms}
        if len(degs) == 1:
            return degs.pop()
        return None

    def is_homogeneous(self, weights, degree) -> bool:
        d = self.weighted_degree(weights)
        return d is DEGREE_ANY or d == degree

    def max_weighted_degree(self, weights) -> Fraction:
        sigma = weights.sigma if isinstance(weights, DilationWeights) else tuple(weights)
        if self.is_zero():
            return Fraction(0)
        return max(sum(e * s for e, s in zip(exps, sigma)) for exps in self.terms)

    def depends_on(self, i: int) -> bool:
        return any(exps[i] > 0 for exps in self.terms)

    # -- text form ---------------------------------------------------------------

    def format(self, weights=None) -> str:
        """Canonical text form: graded-lexicographic term order.

        Terms look like ``-1/2 x1^2 x3``; the zero polynomial is ``"0"``.
        When ``weights`` is None the grading falls back to total degree.
        """
        if self.is_zero():
            return "0"
        if weights is None:
            sigma = (Fraction(1),) * self.nvars
        else:
            sigma = weights.sigma if isinstance(weights, DilationWeights) else tuple(weights)

        def key(exps):
            return (sum(e * s for e, s in zip(exps, sigma)), exps)

        parts = []
        for exps in sorted(self.terms, key=key):
            c = self.terms[exps]
            factors = []
            for i, e in enumerate(exps):
                if e == 1:
                    factors.append(f"x{i + 1}")
                elif e > 1:
                    factors.append(f"x{i + 1}^{e}")
            if not factors:
                body = str(abs(c))
            elif abs(c) == 1:
                body = " ".join(factors)
            else:
                body = f"{abs(c)} " + " ".join(factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        sign0, body0 = parts[0]
        out = ("-" if sign0 == "-" else "") + body0
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __repr__(self):
        return f"Poly({self.nvars}, {self.format()!r})"

    @staticmethod
    def parse(text: str, nvars: int) -> "Poly":
        return parse_poly(text, nvars)


_TERM_FACTOR = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def parse_poly(text: str, nvars: int) -> Poly:
    """Parse the canonical text form, e.g. ``"1"``, ``"x1"``, ``"-1/2 x1^2 x3"``.

    Accepts ``*`` or whitespace between factors.  Raises ``ValueError`` with
    the offending fragment on malformed input.
    """
    s = text.strip()
    if not s:
        raise ValueError("empty polynomial string")
    # normalize separators and split into signed terms
    s = s.replace("*", " ")
    s = re.sub(r"\s+", " ", s)
    s = s.replace("- ", "-").replace("+ ", "+")
    chunks: list[str] = []
    for piece in s.replace("-", " -").replace("+", " +").split():
        chunks.append(piece)
    # rejoin factors that belong to the previous signed term
    terms: list[list[str]] = []
    for piece in chunks:
        if piece[0] in "+-" or not terms:
            terms.append([piece])
        else:
            terms[-1].append(piece)
    total = Poly.zero(nvars)
    for factors in terms:
        coef = Fraction(1)
        exps = [0] * nvars
        first = factors[0]
        if first[0] in "+-":
            if first[0] == "-":
                coef = -coef
            first = first[1:]
        items = ([first] if first else []) + factors[1:]
        for item in items:
            m = _TERM_FACTOR.match(item)
            if m:
                idx = int(m.group(1)) - 1
                if not 0 <= idx < nvars:
                    raise ValueError(f"variable x{idx + 1} out of range in {text!r}")
                exps[idx] += int(m.group(2) or 1)
            else:
                try:
                    coef *= Fraction(item)
                except ValueError:
                    raise ValueError(f"bad factor {item!r} in polynomial {text!r}") from None
        total = total + Poly(nvars, {tuple(exps): coef})
    return total


class DilationWeights:
    """Dilation exponents ``1 = sigma_1 <= ... <= sigma_n`` stored as rationals.

    Irrational weights are rejected at construction; the lifting pipeline
    needs exact grading arithmetic.
    """

    __slots__ = ("sigma",)

    def __init__(self, sigma: Iterable):
        vals = tuple(_as_fraction(s) for s in sigma)
        if not vals:
            raise ValueError("weights must be nonempty")
        if vals[0] != 1:
            raise ValueError(f"first weight must be 1, got {vals[0]}")
        for a, b in zip(vals, vals[1:]):
            if b < a:
                raise ValueError("weights must be non-decreasing")
        if any(v < 1 for v in vals):
            raise ValueError("all weights must be >= 1")
        object.__setattr__(self, "sigma", vals)

    def __setattr__(self, name, value):
        raise AttributeError("DilationWeights is immutable")

    def __len__(self):
        return len(self.sigma)

    def __iter__(self):
        return iter(self.sigma)

    def __getitem__(self, i):
        return self.sigma[i]

    def __eq__(self, other):
        return isinstance(other, DilationWeights) and self.sigma == other.sigma

    def __repr__(self):
        return f"DilationWeights({[str(s) for s in self.sigma]})"

    @property
    def homogeneous_dimension(self) -> Fraction:
        return sum(self.sigma, Fraction(0))

    def all_integer(self) -> bool:
        return all(s.denominator == 1 for s in self.sigma)

    def dilate(self, lam: float, x):
        """Apply ``x_i -> lam**sigma_i x_i`` numerically (scalar or batch)."""
        x = np.asarray(x, dtype=float)
        factors = np.array([float(lam) ** float(s) for s in self.sigma])
        return x * factors

    def dilate_exact(self, lam: Fraction, x: Sequence[Fraction]) -> list[Fraction]:
        lam = _as_fraction(lam)
        out = []
        for s, v in zip(self.sigma, x):
            if s.denominator != 1:
                raise ValueError("exact dilation needs integer weights")
            out.append(lam**s.numerator * _as_fraction(v))
        return out


class PolyMap:
    """A tuple of polynomials sharing one variable count, with fast batch eval.

    The float path compiles every component to (exponent matrix, coefficient
    vector) and evaluates with numpy; the exact path delegates to `Poly`.
    """

    def __init__(self, components: Sequence[Poly]):
        comps = tuple(components)
        if not comps:
            raise ValueError("PolyMap needs at least one component")
        nv = comps[0].nvars
        if any(c.nvars != nv for c in comps):
            raise ValueError("components must share a variable count")
        self.components = comps
        self.nvars = nv
        self._compiled = None

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def _compile(self):
        if self._compiled is None:
            compiled = []
            max_exp = [0] * self.nvars
            for p in self.components:
                terms = []
                for exps, c in p.terms.items():
                    nz = [(i, e) for i, e in enumerate(exps) if e > 0]
                    for i, e in nz:
                        max_exp[i] = max(max_exp[i], e)
                    terms.append((float(c), nz))
                compiled.append(terms)
            self._compiled = (compiled, max_exp)
        return self._compiled

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate on points of shape (..., nvars); returns (..., len(self)).

        Monomials are assembled from per-variable power tables built by
        repeated multiplication, which beats generic exponentiation on the
        large flat batches the quadratures produce.
        """
        pts = np.asarray(pts, dtype=float)
        squeeze = pts.ndim == 1
        if squeeze:
            pts = pts[None, :]
        if pts.shape[-1] != self.nvars:
            raise ValueError(f"points have {pts.shape[-1]} coords, map needs {self.nvars}")
        compiled, max_exp = self._compile()
        powers: list[list[np.ndarray] | None] = []
        for i in range(self.nvars):
            if max_exp[i] == 0:
                powers.append(None)
                continue
            tab = [None, pts[..., i]]
            for e in range(2, max_exp[i] + 1):
                tab.append(tab[-1] * pts[..., i])
            powers.append(tab)
        out = np.empty(pts.shape[:-1] + (len(self.components),))
        for j, terms in enumerate(compiled):
            acc = np.zeros(pts.shape[:-1])
            for coef, nz in terms:
                if nz:
                    i0, e0 = nz[0]
                    monom = coef * powers[i0][e0]
                    for i, e in nz[1:]:
                        monom = monom * powers[i][e]
                    acc += monom
                else:
                    acc += coef
            out[..., j] = acc
        return out[0] if squeeze else out

    def eval_exact(self, point: Sequence[Fraction]) -> list[Fraction]:
        return [p(point) for p in self.components]

    def subs(self, values: Sequence[Poly]) -> "PolyMap":
        return PolyMap([p.subs(values) for p in self.components])
