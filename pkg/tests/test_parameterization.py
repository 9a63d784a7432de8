# Dateiname: tests/test_parameterization.py
"""
Tests für die hierarchische Parametrisierung: Auswertung, Jacobi-Matrix,
Inversion und Diagnosen.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.exceptions import InversionError, SchemeError
from core.scheme import VariableScheme
from core.sequence import MarginalSequence
from core.table import Table
from logic.parameterization import (build, check_smoothness, collapsibility_check, collapsibility_report,
                                    compute_lambda, invert, jacobian, with_empty)


@pytest.fixture
def scheme_233() -> VariableScheme:
    return VariableScheme.from_levels({"A": 2, "B": 3, "C": 3})


@pytest.fixture
def table_233(scheme_233) -> Table:
    rng = np.random.default_rng(3)
    return Table.from_counts(scheme_233, rng.integers(4, 50, size=scheme_233.shape))


def _param(scheme, marginals, coding="local"):
    return build(scheme, MarginalSequence.create(scheme, marginals), coding)


def test_component_count_and_labels(abc_scheme):
    param = _param(abc_scheme, ["AB", "AC", "BC", "ABC"])
    assert param.n_components == 7
    assert param.labels == ("AB|A|2", "AB|B|2", "AB|AB|2,2", "AC|C|2", "AC|AC|2,2",
                            "BC|BC|2,2", "ABC|ABC|2,2,2")
    assert param.index_of("BC|BC|2,2") == 5
    assert abc_scheme.label(param.housed_in(abc_scheme.effect("C"))) == "AC"
    with pytest.raises(SchemeError):
        param.index_of("AB|C|2")


@pytest.mark.parametrize("coding", ["local", "spanning", "global", "continuation"])
def test_every_coding_is_complete(scheme_233, coding):
    param = _param(scheme_233, [["A", "B"], ["A", "C"], ["A", "B", "C"]], coding)
    assert param.n_components == scheme_233.n_cells - 1
    assert check_smoothness(param).hierarchical_complete


@pytest.mark.parametrize("coding", ["local", "global"])
def test_sparse_matrices_reproduce_component_values(table_233, coding):
    param = _param(table_233.scheme, [["A", "B"], ["B", "C"], ["A", "B", "C"]], coding)
    p = table_233.normalized().flat
    lam = param.B.T @ np.log(param.M.T @ p)
    assert_allclose(lam, compute_lambda(param, table_233).values, atol=1e-12)


def test_lambda_does_not_depend_on_scale(table_233):
    param = _param(table_233.scheme, [["A", "B"], ["A", "B", "C"]])
    assert_allclose(param.values(table_233.cells * 7.5), compute_lambda(param, table_233).values, atol=1e-12)


def test_jacobian_matches_finite_differences(table_233):
    param = _param(table_233.scheme, [["A", "B"], ["A", "C"], ["A", "B", "C"]], "global")
    m = table_233.flat
    J = jacobian(param, table_233)
    h = 1e-5
    numeric = np.zeros_like(J)
    for k in range(m.size):
        up, down = m.copy(), m.copy()
        up[k] += h
        down[k] -= h
        numeric[k] = (param.values(up) - param.values(down)) / (2 * h)
    assert_allclose(J, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("marginals", [["AB", "ABCD"], ["A", "B", "AB", "ABC", "ABD", "ABCD"]])
def test_roundtrip_on_random_four_way_tables(marginals):
    """100 zufällige positive 2^4-Tafeln: invert(compute_lambda(p)) weicht höchstens 1e-9 ab."""
    scheme = VariableScheme.binary("ABCD")
    param = _param(scheme, marginals)
    rng = np.random.default_rng(4711)
    worst = 0.0
    for _ in range(100):
        p = Table.from_probabilities(scheme, rng.uniform(0.01, 1.0, size=scheme.shape))
        recovered = invert(param, compute_lambda(param, p))
        worst = max(worst, float(np.max(np.abs(recovered.cells - p.cells))))
    assert worst < 1e-9


def test_jacobian_on_random_tables():
    """Zentrale Differenzen auf 20 Zufallstafeln, relativer Fehler unter 1e-6."""
    scheme = VariableScheme.binary("ABCD")
    param = _param(scheme, ["A", "B", "AB", "ABC", "ABD", "ABCD"])
    rng = np.random.default_rng(99)
    h = 1e-5
    for _ in range(20):
        m = rng.uniform(20.0, 200.0, size=scheme.n_cells)
        J = param.jacobian(m)
        numeric = np.zeros_like(J)
        for k in range(m.size):
            up, down = m.copy(), m.copy()
            up[k] += h
            down[k] -= h
            numeric[k] = (param.values(up) - param.values(down)) / (2 * h)
        assert np.max(np.abs(J - numeric)) / np.max(np.abs(J)) < 1e-6


def test_jacobian_products_agree_with_dense_jacobian(table_233):
    param = _param(table_233.scheme, [["A", "B"], ["A", "B", "C"]])
    m = table_233.flat
    J = param.jacobian(m)
    rng = np.random.default_rng(0)
    C = np.zeros((param.n_components, 3))
    C[[0, 4, 9], [0, 1, 2]] = 1.0
    C[10, 2] = -1.0
    assert_allclose(param.jacobian_product(m, C), J @ C, atol=1e-12)
    V = rng.normal(size=(m.size, 2))
    assert_allclose(param.jacobian_transpose(m, V), J.T @ V, atol=1e-12)


@pytest.mark.parametrize("method", ["ipf", "newton"])
@pytest.mark.parametrize("coding", ["local", "global"])
def test_invert_recovers_the_table(table_233, method, coding):
    param = _param(table_233.scheme, [["A", "B"], ["A", "C"], ["A", "B", "C"]], coding)
    lam = compute_lambda(param, table_233)
    recovered = invert(param, lam, method=method)
    assert recovered.kind == "probabilities"
    assert_allclose(recovered.cells, table_233.normalized().cells, atol=1e-8)


def test_invert_with_empty_effect_returns_frequencies(table_233):
    param = with_empty(_param(table_233.scheme, [["A", "B"], ["A", "B", "C"]]))
    assert param.include_empty and param.labels[0].split("|")[1] == "∅"
    lam = param.values(table_233.cells)
    recovered = invert(param, lam)
    assert_allclose(recovered.cells, table_233.cells, rtol=1e-8)


def test_invert_over_non_decomposable_sequence_with_compatible_values(positive_abc):
    param = _param(positive_abc.scheme, ["AB", "AC", "BC", "ABC"])
    assert not param.decomposability.decomposable
    recovered = invert(param, compute_lambda(param, positive_abc))
    assert_allclose(recovered.cells, positive_abc.normalized().cells, atol=1e-8)


def test_incompatible_marginals_raise_inversion_error(abc_scheme):
    """
    Randtafeln AB = [[3,1],[1,3]], AC = [[1,3],[3,1]], BC = [[3,1],[1,3]] sind
    einzeln zulässig, haben aber keine gemeinsame Verteilung.
    """
    param = _param(abc_scheme, ["AB", "AC", "BC", "ABC"])
    values = np.zeros(param.n_components)
    values[param.index_of("AB|AB|2,2")] = 0.25 * np.log(9.0)
    values[param.index_of("AC|AC|2,2")] = 0.25 * np.log(1.0 / 9.0)
    values[param.index_of("BC|BC|2,2")] = 0.25 * np.log(9.0)
    with pytest.raises(InversionError):
        invert(param, values, max_iter=2000)


def test_invert_rejects_wrong_length(abc_scheme):
    param = _param(abc_scheme, ["AB", "ABC"])
    with pytest.raises(SchemeError):
        invert(param, np.zeros(3))


def test_smoothness_report_flags_repeated_effects(abc_scheme):
    param = _param(abc_scheme, ["AB", "AC", "ABC"])
    report = check_smoothness(param)
    assert report.ordered_decomposable and report.variation_independent and report.hierarchical_complete
    ab, ac, a = abc_scheme.effect("AB"), abc_scheme.effect("AC"), abc_scheme.effect("A")
    report = check_smoothness(param, extra_components=[(ab, a), (ac, a)])
    assert len(report.hazards) == 1
    assert "appears in marginals AB and AC" in report.hazards[0]


def test_non_decomposable_sequence_is_not_variation_independent(abc_scheme):
    report = check_smoothness(_param(abc_scheme, ["AB", "AC", "BC", "ABC"]))
    assert not report.variation_independent
    assert report.failing_prefix == 3


def test_collapsibility_when_third_variable_is_independent(abc_scheme):
    """C unabhängig von (A, B): alle Parameter von AB stimmen in AB und ABC überein."""
    p_ab = np.array([[0.1, 0.3], [0.2, 0.4]])
    p_c = np.array([0.35, 0.65])
    table = Table.from_probabilities(abc_scheme, p_ab[:, :, None] * p_c[None, None, :])
    report = collapsibility_report(table, abc_scheme.effect("AB"), abc_scheme.effect("AB"), abc_scheme.full)
    assert report.collapsible and report.criterion and report.agree
    assert report.max_difference < 1e-12


def test_collapsibility_fails_for_a_generic_table(positive_abc, abc_scheme):
    assert not collapsibility_check(positive_abc, abc_scheme.effect("AB"), abc_scheme.effect("AB"),
                                    abc_scheme.full)


def test_collapsibility_needs_binary_variables(table_233):
    scheme = table_233.scheme
    with pytest.raises(SchemeError):
        collapsibility_check(table_233, scheme.effect(["A", "B"]), scheme.effect(["A", "B"]), scheme.full)
