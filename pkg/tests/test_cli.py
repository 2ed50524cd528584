import json
from pathlib import Path

import pytest

from heatlift.cli import main

DATA = Path(__file__).resolve().parent.parent / "data"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestLift:
    def test_grushin_file(self, capsys):
        code, out, _ = run(capsys, "lift", str(DATA / "grushin.json"), "--no-group")
        assert code == 0
        doc = json.loads(out)
        assert doc["report"]["N"] == 3
        assert doc["report"]["no_lifting_needed"] is False

    def test_builtin_name(self, capsys):
        code, out, _ = run(capsys, "lift", "engel", "--no-group")
        assert code == 0
        assert json.loads(out)["report"]["step"] == "3"

    def test_missing_input_is_usage_error(self, capsys):
        code, _, err = run(capsys, "lift", "no-such-file.json")
        assert code == 2
        assert "neither" in err

    def test_corrupted_file(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"n": 2,\n "weights": [}', encoding="utf-8")
        code, _, err = run(capsys, "lift", str(bad))
        assert code == 2
        assert "line 2" in err

    def test_h2_failure_exit_code(self, capsys, tmp_path):
        doc = {"n": 2, "weights": ["1", "1"], "fields": [["1", "0"]]}
        f = tmp_path / "under.json"
        f.write_text(json.dumps(doc), encoding="utf-8")
        code, _, err = run(capsys, "lift", str(f))
        assert code == 2
        assert "(H.2)" in err

    def test_output_file(self, capsys, tmp_path):
        out_path = tmp_path / "lift.json"
        code, out, _ = run(capsys, "lift", "grushin", "-o", str(out_path))
        assert code == 0 and out == ""
        assert json.loads(out_path.read_text())["report"]["Q"] == "4"


class TestGamma:
    def test_eval(self, capsys):
        code, out, _ = run(capsys, "gamma", "eval", "grushin",
                           "--pole", "0,0,0", "--at", "1,0,0")
        assert code == 0
        assert json.loads(out)["value"] == pytest.approx(0.1725188870, rel=1e-6)

    def test_eval_derivative(self, capsys):
        code, out, _ = run(capsys, "gamma", "eval", "grushin",
                           "--pole", "0,0.3,0.2", "--at", "1,0.5,-0.1",
                           "--deriv", "alpha=1 beta=0")
        assert code == 0
        assert json.loads(out)["value"] == pytest.approx(-0.146118, rel=1e-4)

    def test_grid_row_count(self, capsys, tmp_path):
        out_path = tmp_path / "grid.csv"
        code, _, _ = run(capsys, "gamma", "grid", "grushin",
                         "--pole", "0,0,0", "--s", "1.0",
                         "--ymin=-2,-2", "--ymax=2,2",
                         "--shape", "41,41", "-o", str(out_path))
        assert code == 0
        lines = out_path.read_text().strip().splitlines()
        assert len(lines) == 1 + 1681
        assert lines[0] == "s,y1,y2,gamma"

    def test_bad_deriv_spec(self, capsys):
        code, _, err = run(capsys, "gamma", "eval", "grushin",
                           "--pole", "0,0,0", "--at", "1,1,1",
                           "--deriv", "nonsense")
        assert code == 2


class TestKernelCommands:
    def test_eval(self, capsys):
        code, out, _ = run(capsys, "kernel", "eval", "grushin",
                           "--t", "1.0", "--point", "0,0,0")
        assert code == 0
        assert json.loads(out)["value"] == pytest.approx(1 / 16, rel=1e-9)

    def test_engel_non_convergence_exit(self, capsys):
        code, _, err = run(capsys, "kernel", "eval", "engel",
                           "--t", "1.0", "--point", "0,0,0,0")
        assert code == 3


class TestCauchy:
    def test_constant(self, capsys):
        code, out, _ = run(capsys, "cauchy", "grushin", "--datum", "one",
                           "--t", "0.5", "--x", "0.1,0.2")
        assert code == 0
        assert json.loads(out)["value"] == pytest.approx(1.0, abs=1e-4)


class TestOracle:
    def test_mc(self, capsys):
        code, out, _ = run(capsys, "oracle", "mc", "grushin",
                           "--start", "0,0", "--t1", "0.2", "--dt", "0.01",
                           "--paths", "10000", "--box=-1,1;-1,1",
                           "--bins", "5,5")
        assert code == 0
        doc = json.loads(out)
        assert doc["seed"] == 20240117

    def test_fd(self, capsys):
        code, out, _ = run(capsys, "oracle", "fd", "--box=-4,4;-4,4",
                           "--shape", "61,61", "--T", "0.1",
                           "--probe", "0,0")
        assert code == 0
        assert "probes" in json.loads(out)


class TestVerifyReproducibility:
    def test_engel_verify_deterministic(self, capsys):
        code1, out1, _ = run(capsys, "verify", "engel", "--seed", "3")
        code2, out2, _ = run(capsys, "verify", "engel", "--seed", "3")
        assert code1 == code2 == 0

        def strip_timing(text):
            doc = json.loads(text)
            doc.pop("elapsed_seconds", None)
            return json.dumps(doc, sort_keys=True)

        assert strip_timing(out1) == strip_timing(out2)
