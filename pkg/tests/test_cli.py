# Dateiname: tests/test_cli.py
"""
Tests der Kommandozeile über click's CliRunner; Ergebnisse werden per --out
in Dateien geschrieben und von dort gelesen.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

import ui.cli
from ui.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, cli


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def mh_files(tmp_path):
    table = tmp_path / "mh.csv"
    table.write_text("A,B,count\n1,1,30\n1,2,15\n2,1,5\n2,2,50\n", encoding="utf-8")
    model = tmp_path / "mh.json"
    model.write_text(json.dumps({"marginals": [["A"], ["B"], ["A", "B"]],
                                 "equality_constraints": [["A", "B"]]}), encoding="utf-8")
    return table, model


def _run(runner, args):
    return runner.invoke(cli, ["--quiet", *[str(a) for a in args]])


def test_fit_marginal_homogeneity(runner, mh_files, tmp_path):
    table, model = mh_files
    out = tmp_path / "fit.json"
    result = _run(runner, ["fit", "--table", table, "--model", model, "--out", out])
    assert result.exit_code == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["df"] == 1
    assert doc["convergence"]["converged"]
    assert [c["value"] for c in doc["m_hat"]] == pytest.approx([30, 10, 10, 50], rel=1e-6)


def test_fit_with_gee(runner, mh_files, tmp_path):
    table, model = mh_files
    out = tmp_path / "gee.json"
    result = _run(runner, ["fit", "--table", table, "--model", model, "--algorithm", "gee", "--out", out])
    assert result.exit_code == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["marginals"] == ["A", "B"]
    assert doc["convergence"]["algorithm"] == "gee-tau"
    assert doc["lambda_tilde"]["A|A|2"] == pytest.approx(doc["lambda_tilde"]["B|B|2"], abs=1e-6)


def test_compile_path_model(runner, tmp_path):
    edges = [["F", "G"], ["F", "E"], ["G", "E"], ["G", "O"], ["E", "O"], ["E", "I"], ["O", "I"]]
    model = tmp_path / "path.json"
    model.write_text(json.dumps({"variables": {v: 2 for v in "FGEOI"}, "dag": {"edges": edges}, "path": True}),
                     encoding="utf-8")
    out = tmp_path / "compiled.json"
    result = _run(runner, ["compile", "--model", model, "--out", out])
    assert result.exit_code == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert len(doc["remaining_effects"]) == 13
    assert doc["df"] == 19


def test_compile_without_admissible_ordering_exits_3(runner, tmp_path):
    cis = [{"a": ["X1"], "b": ["X2"], "given": ["X3"]},
           {"a": ["X2"], "b": ["X3"], "given": ["X4"]},
           {"a": ["X2"], "b": ["X4"], "given": ["X1"]}]
    model = tmp_path / "cis.json"
    model.write_text(json.dumps({"variables": {f"X{i}": 2 for i in range(1, 5)}, "independences": cis}),
                     encoding="utf-8")
    result = _run(runner, ["compile", "--model", model])
    assert result.exit_code == EXIT_INFEASIBLE


def test_compile_cyclic_graph_exits_3(runner, tmp_path):
    model = tmp_path / "cycle.json"
    model.write_text(json.dumps({"variables": {"A": 2, "B": 2}, "dag": {"edges": [["A", "B"], ["B", "A"]]}}),
                     encoding="utf-8")
    assert _run(runner, ["compile", "--model", model]).exit_code == EXIT_INFEASIBLE


@pytest.mark.parametrize("sequence, decomposable, prefix", [
    ("AB,AC,BC,ABC", False, 3),
    ("A,B,AB", True, None),
])
def test_check_sequence(runner, tmp_path, sequence, decomposable, prefix):
    out = tmp_path / "check.json"
    result = _run(runner, ["check", sequence, "--out", out])
    assert result.exit_code == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["decomposable"] is decomposable
    assert doc["failing_prefix"] == prefix


def test_check_help_explains_failing_prefix(runner):
    result = runner.invoke(cli, ["check", "--help"])
    assert result.exit_code == EXIT_OK
    assert "from length 3" in result.output
    assert "failing_prefix is the number of" in result.output


def test_simulate_is_reproducible(runner, tmp_path):
    model = tmp_path / "sim.json"
    model.write_text(json.dumps({"variables": {"A": 2, "B": 3}, "marginals": [["A"], ["B"], ["A", "B"]],
                                 "parameters": {"A|A|2": 0.3}}), encoding="utf-8")
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (first, second):
        result = _run(runner, ["simulate", "--model", model, "--n", 200, "--seed", 7, "--out", out])
        assert result.exit_code == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "A,B,count"
    assert sum(int(line.rsplit(",", 1)[1]) for line in lines[1:]) == 200


def test_missing_file_exits_1(runner, tmp_path):
    result = _run(runner, ["fit", "--table", tmp_path / "nope.csv", "--model", tmp_path / "nope.json"])
    assert result.exit_code == EXIT_INPUT


def test_negative_sample_size_exits_1(runner, mh_files):
    table, _ = mh_files
    assert _run(runner, ["simulate", "--table", table, "--n", -5]).exit_code == EXIT_INPUT


@pytest.mark.parametrize("error", [np.linalg.LinAlgError("Singular matrix"), FloatingPointError("overflow")])
def test_numeric_failure_during_fit_exits_2(runner, mh_files, monkeypatch, error):
    """Numerische Fehler aus der linearen Algebra enden mit Code 2 statt mit einem Traceback."""
    def failing_fit(*args, **kwargs):
        raise error

    monkeypatch.setattr(ui.cli, "fit", failing_fit)
    table, model = mh_files
    result = _run(runner, ["fit", "--table", table, "--model", model])
    assert result.exit_code == EXIT_NOT_CONVERGED
    assert result.exception is None or isinstance(result.exception, SystemExit)
