# Dateiname: tests/test_estimation.py
"""
Tests für die Maximum-Likelihood-Schätzung (Lagrange-Iteration und Fisher
Scoring), Teststatistiken und asymptotische Kovarianzen.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from core.exceptions import EstimationError, PositivityError
from core.scheme import VariableScheme
from core.sequence import MarginalSequence
from core.table import Table
from logic.estimation import FitOptions, bic, covariances, fit, g2_saturated, loglik, lr_test
from logic.graphs import DirectedGraph, compile_dag
from logic.modelspec import CIStatement, compile_ci, equality_model, zero_effect_model
from logic.parameterization import build
from logic.simulation import parametric_bootstrap, sample_counts

ALGORITHMS = ["lagrangian", "scoring"]


@pytest.fixture
def mh_spec(mh_param):
    return equality_model(mh_param, [("A", "B")])


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_marginal_homogeneity_closed_form(mh_table, mh_spec, algorithm):
    """Off-Diagonale (b + c) / 2, Diagonale unverändert."""
    result = fit(mh_table, mh_spec, FitOptions(algorithm=algorithm))
    assert result.converged
    assert_allclose(result.m_hat.cells, [[30, 10], [10, 50]], rtol=1e-6)
    assert result.df == 1
    expected_g2 = 2 * (15 * np.log(1.5) + 5 * np.log(0.5))
    assert result.G2 == pytest.approx(expected_g2, rel=1e-6)
    assert result.max_constraint_violation < 1e-8
    assert result.total_deviation < 1e-4


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_marginal_independence_closed_form(positive_abc, abc_scheme, algorithm):
    """A _||_ B über (AB, ABC): m_abc = n_a++ n_+b+ / N * n_abc / n_ab+."""
    spec = compile_ci([CIStatement.of(abc_scheme, "A", "B")], scheme=abc_scheme)
    n = positive_abc.cells
    N = n.sum()
    n_ab = n.sum(axis=2)
    expected = (np.outer(n_ab.sum(axis=1), n_ab.sum(axis=0)) / N)[:, :, None] * n / n_ab[:, :, None]
    result = fit(positive_abc, spec, FitOptions(algorithm=algorithm))
    assert result.converged
    assert_allclose(result.m_hat.cells, expected, rtol=1e-6)


def test_algorithms_agree_on_a_dag_model():
    scheme = VariableScheme.binary("ABCD")
    cis = [CIStatement.of(scheme, "A", "B"), CIStatement.of(scheme, "C", "D", "AB")]
    spec = compile_ci(cis, scheme=scheme)
    rng = np.random.default_rng(42)
    table = Table.from_counts(scheme, rng.integers(5, 80, size=scheme.shape))
    lag = fit(table, spec, FitOptions(algorithm="lagrangian"))
    sco = fit(table, spec, FitOptions(algorithm="scoring"))
    assert lag.converged and sco.converged
    assert_allclose(lag.m_hat.cells, sco.m_hat.cells, rtol=1e-6)
    assert lag.G2 == pytest.approx(sco.G2, rel=1e-6, abs=1e-8)
    assert lag.df == sco.df == 5


def _random_model(seed: int):
    """Gerade Seeds: zufälliger DAG über ABCD; ungerade: zufällige Null-Effekte über einer festen Folge."""
    scheme = VariableScheme.binary("ABCD")
    rng = np.random.default_rng(seed)
    if seed % 2 == 0:
        names = scheme.names
        edges = tuple((a, b) for i, a in enumerate(names) for b in names[i + 1:] if rng.random() < 0.5)
        spec = compile_dag(DirectedGraph(scheme=scheme, edges=edges))[2]
    else:
        marginals = [["AB", "ABCD"], ["A", "B", "AB", "ABC", "ABD", "ABCD"], ["AC", "BD", "ABCD"]][rng.integers(3)]
        param = build(scheme, MarginalSequence.create(scheme, marginals))
        spec = zero_effect_model(param, [b.effect for b in param.blocks if len(b.effect) >= 2 and rng.random() < 0.4])
    table = Table.from_counts(scheme, rng.integers(10, 150, size=scheme.shape))
    return table, spec


@pytest.mark.slow
def test_algorithms_agree_on_random_models():
    for seed in range(50):
        table, spec = _random_model(seed)
        lag = fit(table, spec, FitOptions(algorithm="lagrangian", compute_covariance=False))
        sco = fit(table, spec, FitOptions(algorithm="scoring", compute_covariance=False))
        assert lag.converged and sco.converged, f"seed {seed}"
        assert_allclose(lag.m_hat.cells, sco.m_hat.cells, rtol=1e-6, err_msg=f"seed {seed}")


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_likelihood_ascent(seed):
    """Lagrange: ||u|| fällt streng; Scoring: die Log-Likelihood fällt nie."""
    table, spec = _random_model(seed)
    lag = fit(table, spec, FitOptions(algorithm="lagrangian", compute_covariance=False))
    sco = fit(table, spec, FitOptions(algorithm="scoring", compute_covariance=False))
    assert np.all(np.diff(lag.history) < 0)
    assert np.all(np.diff(sco.history) >= -1e-12)


def test_likelihood_ascent_under_marginal_homogeneity(mh_table, mh_spec):
    lag = fit(mh_table, mh_spec, FitOptions(algorithm="lagrangian"))
    sco = fit(mh_table, mh_spec, FitOptions(algorithm="scoring"))
    assert len(lag.history) > 1
    assert np.all(np.diff(lag.history) < 0)
    assert np.all(np.diff(sco.history) >= -1e-12)


# --- Größere Tafeln ---
@pytest.mark.slow
def test_ten_variable_binary_dag():
    names = "ABCDEFGHIJ"
    scheme = VariableScheme.binary(names)
    edges = tuple((names[j], names[i]) for i in range(1, len(names)) for j in (i - 2, i - 1) if j >= 0)
    _, _, spec = compile_dag(DirectedGraph(scheme=scheme, edges=edges))
    rng = np.random.default_rng(10)
    table = Table.from_counts(scheme, rng.integers(5, 40, size=scheme.shape))
    result = fit(table, spec, FitOptions(compute_covariance=False))
    assert result.converged
    # 1 + 2 + 8 * 4 free conditional probabilities
    assert result.df == scheme.n_cells - 1 - 35
    assert result.max_constraint_violation < 1e-8


@pytest.mark.slow
def test_six_variables_with_five_levels():
    """15 625 Zellen, A und B marginal unabhängig."""
    scheme = VariableScheme.from_levels({name: 5 for name in "ABCDEF"})
    param = build(scheme, MarginalSequence.create(scheme, ["AB", "ABCDEF"]))
    spec = zero_effect_model(param, ["AB"])
    rng = np.random.default_rng(56)
    table = Table.from_counts(scheme, rng.integers(1, 10, size=scheme.shape))
    result = fit(table, spec, FitOptions(compute_covariance=False))
    assert result.converged and result.df == 16
    ab = result.m_hat.cells.sum(axis=(2, 3, 4, 5))
    assert_allclose(ab, np.outer(ab.sum(axis=1), ab.sum(axis=0)) / ab.sum(), rtol=1e-6)


# --- Monte-Carlo-Prüfungen ---
@pytest.mark.slow
def test_dag_model_deviance_has_chi_square_mean():
    """A _||_ B und C _||_ D | AB bei N = 10^5: mittleres G² über 500 Ziehungen nahe df = 5."""
    scheme = VariableScheme.binary("ABCD")
    cis = [CIStatement.of(scheme, "A", "B"), CIStatement.of(scheme, "C", "D", "AB")]
    spec = compile_ci(cis, scheme=scheme)
    p_c = np.array([[[0.2, 0.8], [0.5, 0.5]], [[0.7, 0.3], [0.4, 0.6]]])
    p_d = np.array([[[0.6, 0.4], [0.3, 0.7]], [[0.55, 0.45], [0.15, 0.85]]])
    p = np.einsum("a,b,abc,abd->abcd", [0.4, 0.6], [0.3, 0.7], p_c, p_d)
    model = fit(Table.from_counts(scheme, 1e5 * p), spec)
    assert model.converged
    assert model.G2 == pytest.approx(0.0, abs=1e-6)
    boot = parametric_bootstrap(model, spec, replicates=500, seed=20240611)
    assert boot.failed == 0
    assert 4.4 <= np.mean(boot.G2) <= 5.6


@pytest.mark.slow
def test_likelihood_ratio_size_under_marginal_homogeneity(mh_param, mh_spec, ab_scheme):
    """Nominales Niveau 0,05 bei N = 10^4; 2000 Ziehungen halten das Intervall [0,03; 0,07] sicher ein."""
    truth = Table.from_probabilities(ab_scheme, [[0.30, 0.15], [0.15, 0.40]])
    saturated = zero_effect_model(mh_param, [])
    opts = FitOptions(compute_covariance=False)
    rejected = 0
    replicates = 2000
    for seed in range(replicates):
        counts = sample_counts(truth, 10_000, seed=seed)
        restricted = fit(counts, mh_spec, opts)
        full = fit(counts, saturated, opts)
        assert restricted.converged and full.converged
        _, df, p = lr_test(restricted, full, counts)
        assert df == 1
        rejected += p < 0.05
    assert 0.03 <= rejected / replicates <= 0.07


def test_direct_lambda_update_matches_dense_scoring(positive_abc, abc_scheme):
    param = build(abc_scheme, MarginalSequence.create(abc_scheme, ["AB", "AC", "ABC"]))
    spec = zero_effect_model(param, ["BC", "ABC"])
    dense = fit(positive_abc, spec, FitOptions(algorithm="scoring", direct_update=False))
    direct = fit(positive_abc, spec, FitOptions(algorithm="scoring", direct_update=True))
    assert dense.converged and direct.converged
    assert_allclose(direct.m_hat.cells, dense.m_hat.cells, rtol=1e-6)


def test_zero_cell_is_fitted_near_epsilon(ab_scheme, mh_spec):
    table = Table.from_counts(ab_scheme, [[0, 15], [5, 50]])
    eps = 1e-6
    result = fit(table, mh_spec, FitOptions(zero_cell_epsilon=eps))
    assert result.converged
    assert result.epsilon_flag
    assert result.m_hat.cells[0, 0] < 10 * eps


def test_saturated_model_reproduces_counts(mh_table, mh_param):
    spec = zero_effect_model(mh_param, [])
    result = fit(mh_table, spec)
    assert result.converged and result.df == 0
    assert_allclose(result.m_hat.cells, mh_table.cells)
    assert result.G2 == pytest.approx(0.0, abs=1e-12)
    assert result.p_value == 1.0


def test_saturated_covariance_of_log_odds_ratio(mh_table, mh_param):
    """Varianz von (1/4) log OR ist (1/16) * Summe 1/n."""
    spec = zero_effect_model(mh_param, [])
    result = fit(mh_table, spec)
    k = mh_param.index_of("AB|AB|2,2")
    expected = sum(1.0 / x for x in (30, 15, 5, 50)) / 16.0
    assert result.cov_beta[k, k] == pytest.approx(expected, rel=1e-8)
    rows = mh_table.cells.sum(axis=1)
    a = mh_param.index_of("A|A|2")
    assert result.cov_beta[a, a] == pytest.approx((1 / rows[0] + 1 / rows[1]) / 4.0, rel=1e-8)


def test_covariance_is_symmetric_psd_with_zero_row_sums(positive_abc, abc_scheme):
    spec = compile_ci([CIStatement.of(abc_scheme, "A", "B")], scheme=abc_scheme)
    result = fit(positive_abc, spec)
    cov_m, cov_beta = covariances(result, spec)
    assert_allclose(cov_m, cov_m.T, atol=1e-10)
    assert np.min(np.linalg.eigvalsh(cov_m)) > -1e-8 * np.max(np.abs(cov_m))
    assert_allclose(cov_m.sum(axis=1), 0.0, atol=1e-8)
    assert cov_beta.shape == (spec.n_free, spec.n_free)
    assert np.all(result.beta_se > 0)
    assert_allclose(result.cov_m_diag, np.diag(cov_m))


def test_covariances_need_convergence(mh_table, mh_spec):
    result = fit(mh_table, mh_spec, FitOptions(max_iter=1, compute_covariance=False))
    assert not result.converged
    with pytest.raises(EstimationError):
        covariances(result, mh_spec)


def test_bic_uses_doubled_penalty(mh_table, mh_spec):
    result = fit(mh_table, mh_spec)
    assert result.bic == pytest.approx(result.G2 + 2 * 1 * np.log(100.0))
    assert bic(result, 100.0) == pytest.approx(result.bic)


def test_likelihood_ratio_test(mh_table, mh_param, mh_spec):
    restricted = fit(mh_table, mh_spec)
    saturated = fit(mh_table, zero_effect_model(mh_param, []))
    g2, df, p = lr_test(restricted, saturated, mh_table)
    assert df == 1
    assert g2 == pytest.approx(restricted.G2, rel=1e-8)
    assert 0 < p < 1
    assert lr_test(restricted, restricted, mh_table) == (0.0, 0, 1.0)


def test_negative_likelihood_ratio_is_clamped_with_warning(mh_table, mh_param, mh_spec):
    restricted = fit(mh_table, mh_spec)
    saturated = fit(mh_table, zero_effect_model(mh_param, []))
    with pytest.warns(UserWarning, match="negative likelihood-ratio"):
        g2, _, p = lr_test(saturated, restricted, mh_table)
    assert g2 == 0.0 and p == 1.0


def test_loglik_and_deviance(mh_table):
    m = np.full(4, 25.0)
    n = mh_table.flat
    assert loglik(m, n) == pytest.approx(float(n @ np.log(m) - 100.0))
    assert g2_saturated(n, n) == 0.0
    with pytest.raises(PositivityError):
        loglik(np.array([0.0, 1.0, 1.0, 1.0]), n)


def test_fit_options_are_validated():
    with pytest.raises(ValidationError):
        FitOptions(zero_cell_epsilon=0.0)
    with pytest.raises(ValidationError):
        FitOptions(algorithm="newton")
