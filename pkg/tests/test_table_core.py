# Dateiname: tests/test_table_core.py
"""
Tests für Variablenschema, Tafeln, Marginalsequenzen und geordnete Zerlegbarkeit.
"""

from itertools import permutations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.exceptions import SchemeError, SequenceError
from core.scheme import Effect, VariableScheme
from core.sequence import (MarginalSequence, assign_effects, is_ordered_decomposable,
                           maximal_elements)
from core.table import Table, marginal_index, marginalization_matrix, marginalize


def _brute_force_decomposable(seq: MarginalSequence) -> bool:
    """Alle Reihenfolgen der maximalen Elemente jedes Präfixes durchprobieren."""
    for j in range(3, len(seq.marginals) + 1):
        maximal = maximal_elements(seq.marginals[:j])
        ok = False
        for order in permutations(maximal):
            if all(any((order[h] & _union(order[:h])).issubset(order[g]) for g in range(h))
                   for h in range(1, len(order))):
                ok = True
                break
        if not ok:
            return False
    return True


def _union(effects) -> Effect:
    mask = 0
    for e in effects:
        mask |= e.mask
    return Effect(mask=mask)


def test_marginalize_sums_over_dropped_variables(ab_scheme):
    """Zeilenränder der Tafel (20, 80, 10, 90) sind (100, 100)."""
    table = Table.from_counts(ab_scheme, [20, 80, 10, 90])
    rows = marginalize(table, ab_scheme.effect("A"))
    assert rows.scheme.names == ("A",)
    assert_allclose(rows.flat, [100, 100])
    assert_allclose(marginalize(table, ab_scheme.effect("B")).flat, [30, 170])


def test_cells_are_in_c_order():
    scheme = VariableScheme.from_levels({"A": 2, "B": 3})
    table = Table.from_counts(scheme, np.arange(6))
    # last variable fastest
    assert table.cells[0, 2] == 2
    assert table.cells[1, 0] == 3
    assert_allclose(marginal_index(scheme, scheme.effect("B")), [0, 1, 2, 0, 1, 2])


def test_marginalization_matrix_stacks_marginals(abc_scheme, positive_abc):
    marginals = [abc_scheme.effect("AB"), abc_scheme.effect("C")]
    M = marginalization_matrix(abc_scheme, marginals)
    stacked = M.T @ positive_abc.flat
    expected = np.concatenate([marginalize(positive_abc, m).flat for m in marginals])
    assert M.shape == (8, 6)
    assert_allclose(stacked, expected)


def test_table_rejects_negative_and_mismatched_cells(ab_scheme):
    with pytest.raises(ValueError):
        Table.from_counts(ab_scheme, [1, -1, 2, 3])
    with pytest.raises(ValueError):
        Table.from_counts(ab_scheme, [1, 2, 3])


def test_unknown_variable_is_a_scheme_error(ab_scheme):
    with pytest.raises(SchemeError, match="unknown variable"):
        ab_scheme.effect(["Z"])


@pytest.mark.parametrize("marginals", [
    ["AB", "A"],          # later marginal contained in an earlier one
    ["AB", "AC"],         # does not end with the full set
    [],
])
def test_sequence_must_be_non_decreasing_and_complete(abc_scheme, marginals):
    with pytest.raises(SequenceError):
        MarginalSequence.create(abc_scheme, marginals)


def test_assign_effects_uses_first_containing_marginal(abc_scheme):
    seq = MarginalSequence.create(abc_scheme, ["AB", "AC", "ABC"])
    assignment = {abc_scheme.label(e): i for e, i in assign_effects(seq).items()}
    assert assignment == {"∅": 0, "A": 0, "B": 0, "AB": 0, "C": 1, "AC": 1, "BC": 2, "ABC": 2}


@pytest.mark.parametrize("marginals, decomposable, failing", [
    (["AB", "AC", "ABC"], True, None),
    (["A", "B", "AB", "ABC"], True, None),
    (["AB", "BC", "ABC"], True, None),
    (["AB", "AC", "BC", "ABC"], False, 3),
    (["ABC"], True, None),
])
def test_ordered_decomposability(abc_scheme, marginals, decomposable, failing):
    seq = MarginalSequence.create(abc_scheme, marginals)
    report = is_ordered_decomposable(seq)
    assert report.decomposable is decomposable
    assert report.failing_prefix == failing
    if not decomposable:
        assert [abc_scheme.label(m) for m in report.witness.maximal] == ["AB", "AC", "BC"]


def test_ordered_decomposability_matches_brute_force():
    """Vergleich mit der vollständigen Permutationssuche auf zufälligen Sequenzen über vier Variablen."""
    scheme = VariableScheme.binary("ABCD")
    rng = np.random.default_rng(7)
    full = scheme.full
    for _ in range(200):
        masks = rng.choice(np.arange(1, 15), size=rng.integers(2, 6), replace=False)
        marginals = sorted((Effect(mask=int(m)) for m in masks), key=lambda e: (len(e), e.mask)) + [full]
        seq = MarginalSequence(scheme=scheme, marginals=tuple(marginals))
        assert is_ordered_decomposable(seq).decomposable == _brute_force_decomposable(seq)
