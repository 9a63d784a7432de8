# Dateiname: tests/test_contrasts.py
"""
Tests für Kontrastblöcke, Odds Ratios und die log-lineare Rekursion.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.exceptions import PositivityError, SchemeError
from core.scheme import VariableScheme
from core.table import Table, marginal_array, marginalize
from logic.contrasts import (CODINGS, contrast_matrix, loglinear_recursion, nonredundant,
                             odds_ratios)


@pytest.fixture
def men(ab_scheme) -> Table:
    return Table.from_counts(ab_scheme, [[20, 80], [10, 90]])


@pytest.fixture
def women(ab_scheme) -> Table:
    return Table.from_counts(ab_scheme, [[60, 40], [40, 60]])


@pytest.fixture
def table_233() -> Table:
    scheme = VariableScheme.from_levels({"A": 2, "B": 3, "C": 3})
    rng = np.random.default_rng(11)
    return Table.from_counts(scheme, rng.integers(3, 40, size=scheme.shape))


@pytest.mark.parametrize("which", ["men", "women"])
def test_odds_ratio_of_treatment_tables(which, request, ab_scheme):
    """Beide Tafeln haben das Odds Ratio 2.25 (1800/800 bzw. 3600/1600)."""
    table = request.getfixturevalue(which)
    ab = ab_scheme.effect("AB")
    assert_allclose(odds_ratios(table, ab, ab).ravel(), [2.25])


def test_interaction_is_quarter_log_odds_ratio(men, ab_scheme):
    ab = ab_scheme.effect("AB")
    block = contrast_matrix(ab_scheme, ab, ab)
    value = block.evaluate(men.normalized().cells)
    assert_allclose(value, [0.25 * np.log(2.25)])


@pytest.mark.parametrize("coding", CODINGS)
def test_codings_agree_on_binary_variables(coding, positive_abc, abc_scheme):
    p = positive_abc.normalized().cells
    full = abc_scheme.full
    for effect in abc_scheme.all_effects():
        if effect.is_empty:
            continue
        local = contrast_matrix(abc_scheme, full, effect, "local").evaluate(p)
        other = contrast_matrix(abc_scheme, full, effect, coding).evaluate(p)
        assert_allclose(other, local, atol=1e-12)


def test_local_coding_reproduces_loglinear_recursion(table_233):
    scheme = table_233.scheme
    marginal = scheme.effect(["A", "B"])
    sub = marginalize(table_233, marginal)
    p_marg = marginal_array(table_233.normalized().cells, scheme, marginal)
    for name in (["A"], ["B"], ["A", "B"]):
        effect = scheme.effect(name)
        block = contrast_matrix(scheme, marginal, effect, "local")
        expected = nonredundant(loglinear_recursion(sub, effect.relative_to(marginal)))
        assert block.dimension == expected.size
        assert_allclose(block.evaluate(p_marg), expected, atol=1e-12)


def test_loglinear_recursion_sums_to_zero(table_233):
    effect = table_233.scheme.effect(["B", "C"])
    values = loglinear_recursion(table_233, effect)
    assert values.shape == (3, 3)
    assert_allclose(values.sum(axis=0), 0.0, atol=1e-12)
    assert_allclose(values.sum(axis=1), 0.0, atol=1e-12)


@pytest.mark.parametrize("coding", ["global", "continuation", "spanning"])
def test_non_local_codings_average_log_odds_ratios(coding, table_233):
    """Komponenten = 2^-|E| mal der Mittelwert der log Odds Ratios über die bedingenden Kategorien."""
    scheme = table_233.scheme
    marginal = scheme.full
    effect = scheme.effect(["A", "B"])
    block = contrast_matrix(scheme, marginal, effect, coding)
    ors = odds_ratios(table_233, marginal, effect, coding)
    assert ors.shape == (1, 2, 3)
    expected = 0.25 * np.log(ors).mean(axis=2).ravel()
    assert_allclose(block.evaluate(table_233.normalized().cells), expected, atol=1e-12)


def test_global_odds_ratio_by_hand():
    scheme = VariableScheme.from_levels({"A": 2, "B": 3})
    table = Table.from_counts(scheme, [[10, 20, 30], [15, 5, 25]])
    ab = scheme.full
    ors = odds_ratios(table, ab, ab, "global").ravel()
    # B >= 2 vs B = 1, and B = 3 vs B <= 2
    first = (10 * (5 + 25)) / ((20 + 30) * 15)
    second = ((10 + 20) * 25) / (30 * (15 + 5))
    assert_allclose(ors, [first, second])


def test_block_gradient_matches_finite_differences(table_233):
    scheme = table_233.scheme
    marginal = scheme.effect(["B", "C"])
    block = contrast_matrix(scheme, marginal, marginal, "global")
    p = marginal_array(table_233.normalized().cells, scheme, marginal)
    grad = block.gradient(p)
    h = 1e-6
    numeric = np.zeros_like(grad)
    flat = p.reshape(-1)
    for k in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[k] += h
        down[k] -= h
        numeric[k] = (block.evaluate(up.reshape(p.shape)) - block.evaluate(down.reshape(p.shape))) / (2 * h)
    assert_allclose(grad, numeric, rtol=1e-5, atol=1e-5)


def test_zero_cell_is_a_positivity_error(ab_scheme):
    table = Table.from_counts(ab_scheme, [[0, 5], [5, 5]])
    ab = ab_scheme.effect("AB")
    with pytest.raises(PositivityError):
        contrast_matrix(ab_scheme, ab, ab).evaluate(table.normalized().cells)
    with pytest.raises(PositivityError):
        loglinear_recursion(table, ab)


def test_effect_outside_marginal_is_rejected(abc_scheme):
    with pytest.raises(ValueError):
        contrast_matrix(abc_scheme, abc_scheme.effect("AB"), abc_scheme.effect("AC"))
    with pytest.raises(SchemeError):
        odds_ratios(Table.uniform(abc_scheme), abc_scheme.effect("AB"), abc_scheme.effect("AC"))


def test_marginal_odds_ratio_bound_for_fixed_two_way_marginals(abc_scheme):
    """
    Dreiweg-Tafeln mit festen AB- und AC-Rändern, parametrisiert durch t und u:
    OR(B, C) = (t + u)^2 / (4 - t - u)^2 bleibt höchstens 1, die bedingten
    Odds Ratios nehmen Werte auf beiden Seiten von 1 an.
    """
    grid = np.linspace(0.005, 0.995, 100)
    bc, full = abc_scheme.effect("BC"), abc_scheme.full
    conditional = []
    for t in grid:
        for u in grid:
            cells = np.array([[[t, 3 - t], [1 - t, t]],
                              [[u, 1 - u], [3 - u, u]]])
            table = Table.from_counts(abc_scheme, cells)
            marginal = float(odds_ratios(table, bc, bc)[0, 0])
            assert marginal == pytest.approx((t + u) ** 2 / (4 - t - u) ** 2, rel=1e-10)
            assert marginal <= 1.0
            conditional.append(odds_ratios(table, full, bc)[:, 0, 0])
    conditional = np.array(conditional)
    assert_allclose(conditional[0], [grid[0] ** 2 / ((1 - grid[0]) * (3 - grid[0]))] * 2, rtol=1e-10)
    assert conditional.min() < 1.0 < conditional.max()
