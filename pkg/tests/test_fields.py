from fractions import Fraction

import pytest

from heatlift.fields import (ClosureError, VectorField, check_h1, fields_rank,
                             hormander_rank_at_zero, lie_bracket, lie_closure)
from heatlift.poly import DilationWeights


def F(*comps):
    return VectorField.from_strings(list(comps))


GRUSHIN = [F("1", "0"), F("0", "x1")]
W12 = DilationWeights([1, 2])


class TestBracket:
    def test_grushin_bracket(self):
        assert lie_bracket(*GRUSHIN) == F("0", "1")

    def test_commuting_translations(self):
        assert lie_bracket(F("1", "0"), F("0", "1")).is_zero()

    def test_self_shear(self):
        assert lie_bracket(F("0", "x1"), F("0", "1")).is_zero()

    def test_antisymmetry(self):
        a, b = F("x2", "x1"), F("1", "x1 x2")
        assert lie_bracket(a, b) == lie_bracket(b, a).scale(-1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lie_bracket(F("1", "0"), F("1", "0", "0"))


class TestH1:
    def test_grushin_passes(self):
        assert check_h1(GRUSHIN, W12).ok

    def test_wrong_weights(self):
        rep = check_h1(GRUSHIN, DilationWeights([1, 1]))
        assert not rep.ok
        assert any("component 2" in v for v in rep.violations)

    def test_dependent_fields(self):
        rep = check_h1([F("1", "0"), F("1", "0")], W12)
        assert not rep.ok
        assert any("dependent" in v for v in rep.violations)

    def test_engel_passes(self):
        fields = [F("1", "0", "0"), F("0", "x1", "x1^2")]
        assert check_h1(fields, DilationWeights([1, 2, 3])).ok


class TestRank:
    def test_grushin(self):
        rep = hormander_rank_at_zero(GRUSHIN)
        assert rep.rank == 2 and rep.ok
        assert rep.witness == ["X1", "[X1,X2]"]

    def test_underspanned(self):
        rep = hormander_rank_at_zero([F("1", "0")])
        assert rep.rank == 1 and not rep.ok

    def test_engel_type(self):
        rep = hormander_rank_at_zero([F("1", "0", "0"), F("0", "x1", "x1^2")])
        assert rep.rank == 3
        assert rep.witness == ["X1", "[X1,X2]", "[X1,[X1,X2]]"]

    def test_invariant_under_recombination(self):
        base = [F("1", "0", "0"), F("0", "x1", "x1^2")]
        mixed = [base[0] + base[1].scale(Fraction(3, 2)), base[1].scale(-2)]
        assert hormander_rank_at_zero(mixed).rank == 3


class TestClosure:
    def test_grushin_structure(self):
        basis = lie_closure(GRUSHIN, W12)
        assert basis.dim == 3
        assert basis.degrees == [1, 1, 2]
        assert basis.words == ["X1", "X2", "[X1,X2]"]
        assert basis.structure == {(0, 1): {2: Fraction(1)},
                                   (1, 0): {2: Fraction(-1)}}

    def test_abelian(self):
        basis = lie_closure([F("1", "0"), F("0", "1")], DilationWeights([1, 1]))
        assert basis.dim == 2
        assert basis.structure == {}

    def test_engel(self):
        fields = [F("1", "0", "0"), F("0", "x1", "x1^2")]
        basis = lie_closure(fields, DilationWeights([1, 2, 3]))
        assert basis.dim == 4
        assert basis.degrees == [1, 1, 2, 3]
        assert basis.step == 3

    def test_structure_identities_checked(self, engel_basis):
        # check_structure raises on any antisymmetry/grading/Jacobi failure
        engel_basis.check_structure()

    def test_cap_guard(self):
        fields = [F("1", "0", "0"), F("0", "x1", "x1^2")]
        with pytest.raises(ClosureError):
            lie_closure(fields, DilationWeights([1, 2, 3]), cap=2)

    def test_h1_required(self):
        with pytest.raises(ClosureError):
            lie_closure([F("x2", "0"), F("0", "1")], W12)

    def test_bracket_degree_additive(self):
        basis = lie_closure([F("1", "0", "0"), F("0", "x1", "x1^2")],
                            DilationWeights([1, 2, 3]))
        for (i, j), row in basis.structure.items():
            for k in row:
                assert basis.degrees[k] == basis.degrees[i] + basis.degrees[j]

    def test_dimension_at_least_n(self):
        # rank condition forces N >= n
        basis = lie_closure(GRUSHIN, W12)
        assert basis.dim >= 2


class TestRankUtility:
    def test_fields_rank(self):
        assert fields_rank(GRUSHIN) == 2
        assert fields_rank([GRUSHIN[0], GRUSHIN[0].scale(3)]) == 1
