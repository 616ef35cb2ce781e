import json

import pytest

from tevc.cli import main
from conftest import PROGRAMS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_json(capsys):
    code, out, _ = run(capsys, "parse", PROGRAMS / "accumulate.tev", "--json")
    assert code == 0
    assert json.loads(out)["loop"]["tripCount"] == 15


def test_parse_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.tev"
    bad.write_text("func f( {")
    code, _, err = run(capsys, "parse", bad)
    assert code == 1 and "parse error" in err


def test_invalid_program_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.tev"
    bad.write_text("func f(a: tensor<2>) { return q }")
    code, _, err = run(capsys, "parse", bad)
    assert code == 1 and "UnknownIdentifier" in err


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_analyze_text_and_json(capsys):
    code, out, _ = run(capsys, "analyze", PROGRAMS / "row_sum.tev")
    assert code == 0 and "x (carried) = {x, +, a}" in out
    code, out, _ = run(capsys, "--json", "analyze", PROGRAMS / "row_sum.tev")
    assert code == 0 and "y" in json.loads(out)["exitValues"]


def test_analyze_failure_exit_2(capsys):
    code, out, _ = run(capsys, "analyze", PROGRAMS / "nonlinear.tev")
    assert code == 2 and "SelfReferentialStep" in out


def test_optimize_writes_reparseable_file(tmp_path, capsys):
    dst = tmp_path / "out.tev"
    assert run(capsys, "optimize", PROGRAMS / "row_sum.tev", "-o", dst)[0] == 0
    code, out, _ = run(capsys, "parse", dst)
    assert code == 0 and "scale(120.0" in out and "for i in" not in out


def test_optimize_blocked_exit_2(capsys):
    code, _, err = run(capsys, "optimize", PROGRAMS / "nonlinear.tev")
    assert code == 2 and "v:" in err


def test_run_with_headers(tmp_path, capsys):
    inputs = tmp_path / "in.json"
    inputs.write_text(json.dumps({
        "a": {"shape": [2, 3], "data": [1] * 6},
        "x": {"shape": [2, 3], "data": [1, 2, 3, 4, 5, 6]},
    }))
    code, out, _ = run(capsys, "run", PROGRAMS / "row_sum.tev", "--inputs", inputs, "--record-headers")
    assert code == 0
    doc = json.loads(out)
    assert doc["returns"][0]["data"] == [180.0, 195.0, 210.0]
    assert len(doc["headers"]["y"]) == 15


def test_run_missing_binding_exit_1(tmp_path, capsys):
    inputs = tmp_path / "in.json"
    inputs.write_text(json.dumps({"a": {"shape": [2, 3], "data": [1] * 6}}))
    assert run(capsys, "run", PROGRAMS / "row_sum.tev", "--inputs", inputs)[0] == 1


def test_verify_pass_and_flags_anywhere(capsys):
    code, out, _ = run(capsys, "--seed", "42", "verify", PROGRAMS / "row_sum.tev", "--trials", "30", "--json")
    assert code == 0
    rep = json.loads(out)
    assert rep["passed"] and rep["seed"] == 42 and rep["trials"] == 30


def test_verify_blocked_exit_2(capsys):
    code, out, _ = run(capsys, "verify", PROGRAMS / "nonlinear.tev", "--json")
    assert code == 2 and json.loads(out)["blocking"]["v"].startswith("SelfReferentialStep")


def test_verify_zero_trials_warns(capsys):
    code, out, _ = run(capsys, "verify", PROGRAMS / "row_sum.tev", "--trials", "0")
    assert code == 0 and "vacuous" in out


def test_verify_trip_count_override(capsys):
    code, out, _ = run(capsys, "verify", PROGRAMS / "accumulate.tev", "--trip-count", "20000", "--trials", "2", "--json")
    rep = json.loads(out)
    assert code == 0 and rep["tripCount"] == 20000 and rep["oracleTripCount"] == 10000


def test_verify_failure_exit_3(monkeypatch, capsys):
    from tevc import cli
    from tevc.verify import VerifyReport

    monkeypatch.setattr(cli, "verify_program", lambda *a, **k: VerifyReport(1, 0, 1, 1, "integer", False, 1.0, 1.0, 1))
    assert run(capsys, "verify", PROGRAMS / "row_sum.tev")[0] == 3
