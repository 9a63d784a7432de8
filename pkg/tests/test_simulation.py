# Dateiname: tests/test_simulation.py
"""
Tests für multinomiale Stichproben und den parametrischen Bootstrap.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import SchemeError
from core.table import Table
from logic.estimation import FitOptions, fit
from logic.modelspec import equality_model
from logic.parameterization import compute_lambda
from logic.simulation import parametric_bootstrap, probabilities_from_model, sample_counts


def test_zero_sample_size_gives_empty_table(abc_scheme):
    table = sample_counts(Table.uniform(abc_scheme), 0, seed=1)
    assert table.total == 0.0
    assert table.scheme == abc_scheme


def test_negative_sample_size_is_rejected(abc_scheme):
    with pytest.raises(SchemeError):
        sample_counts(Table.uniform(abc_scheme), -1)


def test_same_seed_same_table(positive_abc):
    first = sample_counts(positive_abc, 500, seed=123)
    second = sample_counts(positive_abc, 500, seed=123)
    assert_array_equal(first.cells, second.cells)
    assert first.total == 500


def test_probability_array_needs_a_scheme(abc_scheme):
    with pytest.raises(SchemeError):
        sample_counts(np.full(8, 1 / 8), 10)
    table = sample_counts(np.full(8, 1 / 8), 10, seed=0, scheme=abc_scheme)
    assert table.total == 10


@pytest.mark.slow
def test_uniform_draws_stay_within_five_standard_deviations(abc_scheme):
    """Jede Zelle einer Gleichverteilung mit N = 80000 liegt innerhalb von 5 SD um N/8."""
    N = 80000
    table = sample_counts(Table.uniform(abc_scheme), N, seed=2024)
    sd = np.sqrt(N * (1 / 8) * (7 / 8))
    assert np.all(np.abs(table.flat - N / 8) < 5 * sd)


def test_probabilities_from_model_reproduces_parameters(mh_param):
    parameters = {"A|A|2": 0.2, "AB|AB|2,2": 0.25 * np.log(2.25)}
    table = probabilities_from_model(mh_param, parameters)
    assert table.kind == "probabilities"
    lam = compute_lambda(mh_param, table).as_dict()
    assert lam["A|A|2"] == pytest.approx(0.2)
    assert lam["B|B|2"] == pytest.approx(0.0, abs=1e-10)
    assert lam["AB|AB|2,2"] == pytest.approx(0.25 * np.log(2.25))


def test_probabilities_from_model_rejects_unknown_labels(mh_param):
    with pytest.raises(SchemeError):
        probabilities_from_model(mh_param, {"AB|C|2": 1.0})


def test_parametric_bootstrap(mh_table, mh_param):
    spec = equality_model(mh_param, [("A", "B")])
    result = fit(mh_table, spec, FitOptions())
    boot = parametric_bootstrap(result, spec, replicates=40, seed=9)
    assert boot.failed + boot.beta_draws.shape[0] == 40
    assert boot.beta_draws.shape[1] == len(result.beta_hat)
    assert len(boot.G2) == boot.beta_draws.shape[0]
    assert boot.covariance.shape == (len(result.beta_hat),) * 2
    again = parametric_bootstrap(result, spec, replicates=40, seed=9)
    assert_allclose(again.beta_draws, boot.beta_draws)
