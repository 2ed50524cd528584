"""Vector-field system files and the construction pipeline.

A system file is JSON:

    { "n": 2, "weights": ["1", "2"], "fields": [["1", "0"], ["0", "x1"]] }

with polynomial components in the canonical text form.  Built-in systems
cover the standard desk examples; `build_system` runs the checks and the
lifting and caches the result per canonical system document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

from .carnot import CarnotGroup, NoLiftingNeeded, build_split_coordinates
from .fields import (CheckReport, RankReport, VectorField, check_h1,
                     hormander_rank_at_zero, lie_closure)
from .poly import DilationWeights, Poly


class SystemError(ValueError):
    """Malformed system document or failed structural hypothesis."""


@dataclass
class FieldSystem:
    n: int
    weights: DilationWeights
    fields: list[VectorField]
    name: str = "system"

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "weights": [str(w) for w in self.weights],
            "fields": [[c.format() for c in X.components] for X in self.fields],
        }


def parse_system(doc: dict, name: str = "system") -> FieldSystem:
    for key in ("n", "weights", "fields"):
        if key not in doc:
            raise SystemError(f"system document missing key {key!r}")
    unknown = set(doc) - {"n", "weights", "fields", "name"}
    if unknown:
        raise SystemError(f"unknown keys in system document: {sorted(unknown)}")
    n = doc["n"]
    if not isinstance(n, int) or n < 1:
        raise SystemError("n must be a positive integer")
    try:
        weights = DilationWeights(doc["weights"])
    except (ValueError, TypeError) as e:
        raise SystemError(f"bad weights: {e}") from None
    if len(weights) != n:
        raise SystemError("weights length must equal n")
    fields = []
    for idx, comps in enumerate(doc["fields"]):
        if len(comps) != n:
            raise SystemError(f"field {idx + 1} needs {n} components")
        try:
            fields.append(VectorField([Poly.parse(c, n) for c in comps]))
        except ValueError as e:
            raise SystemError(f"field {idx + 1}: {e}") from None
    if not fields:
        raise SystemError("at least one field is required")
    return FieldSystem(n=n, weights=weights, fields=fields,
                       name=doc.get("name", name))


def load_system(path: str) -> FieldSystem:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return loads_system(text, name=path)


def loads_system(text: str, name: str = "system") -> FieldSystem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SystemError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    return parse_system(doc, name=name)


BUILTIN_SYSTEMS = {
    "grushin": {
        "n": 2,
        "weights": ["1", "2"],
        "fields": [["1", "0"], ["0", "x1"]],
    },
    "engel": {
        "n": 3,
        "weights": ["1", "2", "3"],
        "fields": [["1", "0", "0"], ["0", "x1", "x1^2"]],
    },
    "heisenberg": {
        "n": 3,
        "weights": ["1", "1", "2"],
        "fields": [["1", "0", "-1/2 x2"], ["0", "1", "1/2 x1"]],
    },
}


def builtin_system(name: str) -> FieldSystem:
    if name not in BUILTIN_SYSTEMS:
        raise SystemError(f"unknown builtin system {name!r}; "
                          f"have {sorted(BUILTIN_SYSTEMS)}")
    return parse_system(dict(BUILTIN_SYSTEMS[name]), name=name)


@dataclass
class LiftResult:
    system: FieldSystem
    h1: CheckReport
    rank: RankReport
    N: int
    group: CarnotGroup | None
    no_lifting_needed: bool
    closure_words: list[str]
    closure_degrees: list[str]

    def report(self) -> dict:
        out = {
            "system": self.system.to_json(),
            "h1_ok": self.h1.ok,
            "h1_violations": self.h1.violations,
            "rank": self.rank.rank,
            "rank_required": self.rank.n,
            "rank_witness": self.rank.witness,
            "N": self.N,
            "no_lifting_needed": self.no_lifting_needed,
            "closure_words": self.closure_words,
            "closure_degrees": self.closure_degrees,
        }
        if self.no_lifting_needed:
            out["note"] = ("dim Lie{X} = n: already a homogeneous Carnot group "
                           "on R^n, no lifting needed")
        if self.group is not None:
            out.update(self.group.describe())
            out["verified"] = self.group.report
        return out


@lru_cache(maxsize=16)
def _build_cached(canonical: str) -> LiftResult:
    system = parse_system(json.loads(canonical))
    h1 = check_h1(system.fields, system.weights)
    if not h1.ok:
        raise SystemError("(H.1) fails: " + "; ".join(h1.violations))
    rank = hormander_rank_at_zero(system.fields)
    if not rank.ok:
        raise SystemError(
            f"(H.2) fails: Hormander rank at 0 is {rank.rank}, needs {rank.n}"
        )
    basis = lie_closure(system.fields, system.weights)
    try:
        group = build_split_coordinates(basis)
        no_lift = False
    except NoLiftingNeeded:
        group = None
        no_lift = True
    return LiftResult(
        system=system,
        h1=h1,
        rank=rank,
        N=basis.dim,
        group=group,
        no_lifting_needed=no_lift,
        closure_words=list(basis.words),
        closure_degrees=[str(d) for d in basis.degrees],
    )


def build_system(system: FieldSystem) -> LiftResult:
    """Check (H.1)/(H.2), close the algebra, and build the lift (cached)."""
    return _build_cached(system.canonical_json())
