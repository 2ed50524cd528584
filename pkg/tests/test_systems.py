import json
from pathlib import Path

import pytest

from heatlift.systems import (SystemError, build_system, builtin_system,
                              load_system, loads_system, parse_system)

DATA = Path(__file__).resolve().parent.parent / "data"


class TestParsing:
    def test_grushin_file(self):
        system = load_system(str(DATA / "grushin.json"))
        assert system.n == 2
        assert len(system.fields) == 2

    def test_json_error_reports_position(self):
        with pytest.raises(SystemError) as exc:
            loads_system('{"n": 2,\n "weights": [}')
        assert "line 2" in str(exc.value)

    def test_missing_keys(self):
        with pytest.raises(SystemError):
            parse_system({"n": 2, "weights": ["1", "2"]})

    def test_unknown_keys_rejected(self):
        with pytest.raises(SystemError):
            parse_system({"n": 1, "weights": ["1"], "fields": [["1"]],
                          "extra": True})

    def test_component_count_checked(self):
        with pytest.raises(SystemError):
            parse_system({"n": 2, "weights": ["1", "2"], "fields": [["1"]]})

    def test_bad_polynomial(self):
        with pytest.raises(SystemError):
            parse_system({"n": 1, "weights": ["1"], "fields": [["nope"]]})

    def test_builtins(self):
        for name in ("grushin", "engel", "heisenberg"):
            builtin_system(name)
        with pytest.raises(SystemError):
            builtin_system("unknown")


class TestBuild:
    def test_grushin_lift(self):
        result = build_system(builtin_system("grushin"))
        assert result.N == 3
        assert result.group is not None
        rep = result.report()
        assert rep["q"] == "3" and rep["Q"] == "4"
        assert rep["p"] == 1 and rep["step"] == "2"

    def test_cache_reuses_result(self):
        a = build_system(builtin_system("grushin"))
        b = build_system(builtin_system("grushin"))
        assert a is b

    def test_heisenberg_no_lifting(self):
        result = build_system(builtin_system("heisenberg"))
        assert result.no_lifting_needed and result.group is None
        assert result.N == 3

    def test_h2_failure(self):
        system = parse_system({"n": 2, "weights": ["1", "1"],
                               "fields": [["1", "0"]]})
        with pytest.raises(SystemError) as exc:
            build_system(system)
        assert "(H.2)" in str(exc.value)

    def test_h1_failure(self):
        system = parse_system({"n": 2, "weights": ["1", "1"],
                               "fields": [["1", "0"], ["0", "x1"]]})
        with pytest.raises(SystemError) as exc:
            build_system(system)
        assert "(H.1)" in str(exc.value)

    def test_engel_kernel_unavailable_is_visible(self):
        result = build_system(builtin_system("engel"))
        assert result.group.step == 3
