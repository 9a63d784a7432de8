# Filename: logic/simulation.py
"""
Multinomial sampling from tables and parameter vectors, and the parametric
bootstrap built on it.
"""

import logging
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import SchemeError
from core.scheme import VariableScheme
from core.table import Table
from .estimation import FitOptions, FitResult, ProgressCallback, fit, report_progress
from .modelspec import ModelSpec
from .parameterization import MLLParameterization, invert

log = logging.getLogger(__name__)

Seed = Union[None, int, np.random.Generator]


def sample_counts(source: Union[Table, np.ndarray], N: int, seed: Seed = None,
                  scheme: Optional[VariableScheme] = None) -> Table:
    """
    Draw a table of counts of total ``N``.

    ``source`` is a table (counts or probabilities) or a probability array
    together with ``scheme``. The same integer seed gives the same table.

    :raises SchemeError: for a negative ``N`` or an array without a scheme
    """
    if N < 0:
        raise SchemeError(f"sample size must be nonnegative, got {N}")
    if isinstance(source, Table):
        scheme = source.scheme
        probs = source.normalized().flat
    else:
        if scheme is None:
            raise SchemeError("a probability array needs a scheme")
        probs = np.asarray(source, dtype=float).reshape(-1)
        if probs.size != scheme.n_cells:
            raise SchemeError(f"expected {scheme.n_cells} probabilities, got {probs.size}")
        probs = probs / probs.sum()
    if N == 0:
        return Table.from_counts(scheme, np.zeros(scheme.shape))
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(int(N), probs)
    return Table.from_counts(scheme, counts.reshape(scheme.shape).astype(float))


def probabilities_from_model(param: MLLParameterization, parameters: Dict[str, float],
                             method: str = "ipf") -> Table:
    """
    Probability table with the given labelled components; unlisted
    components are zero.

    :raises SchemeError: for a label the parameterization does not know
    :raises InversionError: if the values admit no table
    """
    values = np.zeros(param.n_components)
    for label, value in parameters.items():
        values[param.index_of(label)] = float(value)
    table = invert(param, values, method=method)
    return table if table.kind == "probabilities" else table.normalized()


class BootstrapResult(BaseModel):
    """
    Replicate fits of a parametric bootstrap.

    :ivar beta_draws: One row of ``beta_hat`` per converged replicate
    :ivar G2: Deviance of every converged replicate
    :ivar failed: Replicates that did not converge
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta_draws: np.ndarray
    G2: List[float] = Field(default_factory=list)
    failed: int = 0

    @property
    def covariance(self) -> np.ndarray:
        return np.cov(self.beta_draws, rowvar=False)


def parametric_bootstrap(fit_result: FitResult, spec: ModelSpec, replicates: int, seed: Seed = None,
                         opts: Optional[FitOptions] = None,
                         progress_callback: ProgressCallback = None) -> BootstrapResult:
    """
    Refit ``spec`` to tables drawn from ``fit_result.m_hat`` at the original
    sample size.
    """
    rng = np.random.default_rng(seed)
    opts = (opts or FitOptions()).model_copy(update={"compute_covariance": False})
    N = int(round(fit_result.N))
    draws, g2, failed = [], [], 0
    for r in range(replicates):
        counts = sample_counts(fit_result.m_hat, N, seed=rng)
        refit = fit(counts, spec, opts)
        if not refit.converged:
            failed += 1
            continue
        draws.append(refit.beta_hat)
        g2.append(refit.G2)
        if (r + 1) % 50 == 0:
            report_progress(progress_callback, f"bootstrap replicate {r + 1}/{replicates}")
    if failed:
        log.warning(f"FIT: {failed} of {replicates} bootstrap replicates did not converge")
    width = len(fit_result.beta_hat)
    beta = np.vstack(draws) if draws else np.zeros((0, width))
    return BootstrapResult(beta_draws=beta, G2=g2, failed=failed)
