# Filename: logic/estimation.py
"""
Constrained maximum likelihood for marginal log-linear models.

Two fitters share one result type:

- ``fit_lagrangian``: iterates ``log m <- log m + step * u(m)`` on the
  Lagrangian stationarity equations; only ``Lambda C`` is ever formed.
- ``fit_scoring``: Fisher scoring on ``beta`` (freedom form); every step maps
  ``lambda = X beta`` back to a table by :func:`invert`. Above
  ``DIRECT_LAMBDA_THRESHOLD`` cells the update is done directly on
  ``lambda`` so that the square Jacobian is never inverted.

Observed zero cells are replaced by ``zero_cell_epsilon`` once, before the
first iteration. The multinomial total is not imposed while iterating;
``|sum m - N|`` is reported afterwards.
"""

import logging
import warnings
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.stats import chi2

from config import settings
from core.exceptions import EstimationError, InversionError, PositivityError, SchemeError
from core.table import Table
from .modelspec import ModelSpec, is_selection
from .parameterization import MLLParameterization, ParamVector, invert, with_empty

log = logging.getLogger(__name__)

ProgressCallback = Optional[Callable[[str], None]]


# ------------------------------------------------------------------------------
# Options and results
# ------------------------------------------------------------------------------
class FitOptions(BaseModel):
    """
    Settings of one fit; defaults come from :mod:`config.settings`.

    :ivar algorithm: ``lagrangian`` or ``scoring``
    :ivar zero_cell_epsilon: Value substituted for observed zero cells
    :ivar step_rule: Step-size rule (halving from 1)
    :ivar tol_constraint: Convergence bound on ``max |C' lambda|``
    :ivar tol_score: Convergence bound on the update direction
    :ivar max_iter: Iteration budget
    :ivar max_halvings: Step halvings before a stall is declared
    :ivar ridge: Ridge added to singular systems
    :ivar inner_sweeps: Inversion budget of one scoring step
    :ivar direct_update: Force (True) or forbid (False) the direct lambda update; None decides by size
    :ivar compute_covariance: Whether to compute the asymptotic covariances
    """
    algorithm: Literal["lagrangian", "scoring"] = "lagrangian"
    zero_cell_epsilon: float = Field(default=settings.ZERO_CELL_EPSILON, gt=0, lt=1)
    step_rule: Literal["halving"] = "halving"
    tol_constraint: float = Field(default=settings.TOL_CONSTRAINT, gt=0)
    tol_score: float = Field(default=settings.TOL_SCORE, gt=0)
    max_iter: int = Field(default=settings.MAX_ITER, ge=1)
    max_halvings: int = Field(default=settings.MAX_HALVINGS, ge=0)
    ridge: float = Field(default=settings.RIDGE, gt=0)
    inner_sweeps: int = Field(default=settings.SCORING_INNER_SWEEPS, ge=1)
    direct_update: Optional[bool] = None
    compute_covariance: bool = True


class FitResult(BaseModel):
    """
    Outcome of a maximum-likelihood fit.

    :ivar m_hat: Fitted expected frequencies
    :ivar lambda_hat: Parameters of ``m_hat``
    :ivar beta_hat: Freedom-form coefficients
    :ivar cov_m: Asymptotic covariance of ``m_hat`` (None above the size limit)
    :ivar cov_beta: Asymptotic covariance of ``beta_hat`` (None above the size limit)
    :ivar cov_m_diag: Diagonal of ``cov_m``, also filled when the full matrix is skipped
    :ivar G2: Deviance against the saturated model
    :ivar df: Rank of the constraint matrix
    :ivar p_value: Upper chi-square tail of ``G2``
    :ivar bic: ``G2 + 2 df log N``
    :ivar iterations: Iterations used
    :ivar converged: Whether the stopping rule was met
    :ivar max_constraint_violation: ``max |C' lambda_hat|``
    :ivar score_norm: Size of the last update direction
    :ivar epsilon_flag: True when observed zeros were replaced
    :ivar total_deviation: ``|sum m_hat - N|``
    :ivar history: Merit value per iteration (``||u||`` or log-likelihood)
    :ivar algorithm: Algorithm that produced the fit
    :ivar N: Sample size
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m_hat: Table
    lambda_hat: ParamVector
    beta_hat: np.ndarray
    cov_m: Optional[np.ndarray] = None
    cov_beta: Optional[np.ndarray] = None
    cov_m_diag: Optional[np.ndarray] = None
    G2: float
    df: int
    p_value: float
    bic: float
    iterations: int
    converged: bool
    max_constraint_violation: float
    score_norm: float = float("nan")
    epsilon_flag: bool = False
    total_deviation: float = 0.0
    history: List[float] = Field(default_factory=list)
    algorithm: str = "lagrangian"
    N: float = 0.0

    @property
    def beta_se(self) -> Optional[np.ndarray]:
        if self.cov_beta is None:
            return None
        return np.sqrt(np.clip(np.diag(self.cov_beta), 0.0, None))


# ------------------------------------------------------------------------------
# Likelihood and test statistics
# ------------------------------------------------------------------------------
def _flat(t) -> np.ndarray:
    return t.flat if isinstance(t, Table) else np.asarray(t, dtype=float).reshape(-1)


def loglik(m, n) -> float:
    """
    Poisson kernel ``n' log m - 1'm`` (constant dropped).

    :raises PositivityError: if ``m`` has a nonpositive cell
    """
    m, n = _flat(m), _flat(n)
    if m.shape != n.shape:
        raise SchemeError("m and n have different sizes")
    if np.any(m <= 0):
        raise PositivityError("log-likelihood needs strictly positive expected frequencies")
    return float(n @ np.log(m) - m.sum())


def g2_saturated(n, m) -> float:
    """``2 sum n log(n / m)`` with ``0 log 0 = 0``."""
    n, m = _flat(n), _flat(m)
    hit = n > 0
    return float(2.0 * np.sum(n[hit] * np.log(n[hit] / m[hit])))


def bic(fit: FitResult, N: float) -> float:
    """``G2 + 2 df log N`` (note the factor 2 on the penalty)."""
    return float(fit.G2 + 2.0 * fit.df * np.log(N))


def lr_test(fit0: FitResult, fit1: FitResult, n: Table) -> Tuple[float, int, float]:
    """
    Likelihood-ratio test of the restricted fit ``fit0`` inside ``fit1``.

    ``G2 = 2 n' log(m1 / m0)``; slightly negative values from rounding are
    clamped to zero, clearly negative ones additionally raise a warning.

    :return: (G2, df, p)
    :raises SchemeError: if the fits and ``n`` are not over the same scheme
    """
    if fit0.m_hat.scheme != fit1.m_hat.scheme or n.scheme != fit0.m_hat.scheme:
        raise SchemeError("likelihood-ratio test needs fits of the same table")
    nv = n.flat
    hit = nv > 0
    G2 = float(2.0 * np.sum(nv[hit] * np.log(fit1.m_hat.flat[hit] / fit0.m_hat.flat[hit])))
    df = fit0.df - fit1.df
    if G2 < 0:
        if G2 < -1e-8:
            warnings.warn(f"negative likelihood-ratio statistic ({G2:.3e}) set to 0; "
                          "check that the models are nested and both fits converged", UserWarning)
        G2 = 0.0
    p = 1.0 if G2 == 0.0 or df <= 0 else float(chi2.sf(G2, df))
    log.info(f"FIT: LR test G2={G2:.4f}, df={df}, p={p:.4g}")
    return G2, df, p


# ------------------------------------------------------------------------------
# Shared helpers
# ------------------------------------------------------------------------------
def report_progress(progress_callback: ProgressCallback, message: str) -> None:
    if progress_callback:
        try:
            progress_callback(message)
        except Exception as cb_err:
            log.warning(f"FIT: progress callback failed: {cb_err}")


def solve_with_ridge(K: np.ndarray, rhs: np.ndarray, ridge: float, what: str) -> np.ndarray:
    """Solve ``K x = rhs``; on singularity retry with ``K + ridge I`` and warn."""
    if K.shape[0] == 0:
        return np.zeros(rhs.shape)
    try:
        sol = np.linalg.solve(K, rhs)
        if np.all(np.isfinite(sol)) and np.linalg.cond(K) < 1.0 / np.finfo(float).eps:
            return sol
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(K)))))
    warnings.warn(f"{what} is singular; adding ridge {ridge:g}", RuntimeWarning)
    log.warning(f"FIT: {what} is singular, ridge {ridge:g} applied")
    try:
        return np.linalg.solve(K + ridge * scale * np.eye(K.shape[0]), rhs)
    except np.linalg.LinAlgError as e:
        raise EstimationError(f"{what} stays singular after ridge regularization") from e


def _coefficients(X: sparse.csr_matrix, lam: np.ndarray) -> np.ndarray:
    if is_selection(X):
        return X.T @ lam
    return np.linalg.lstsq(X.toarray(), lam, rcond=None)[0]


def _observed(n: Table, spec: ModelSpec, eps: float) -> Tuple[np.ndarray, np.ndarray, bool]:
    if n.scheme != spec.scheme:
        raise SchemeError("table and model use different schemes")
    if n.kind != "counts":
        raise SchemeError("maximum likelihood needs a table of counts")
    nv = n.flat.copy()
    zeros = nv == 0
    if np.any(zeros):
        log.warning(f"FIT: {int(zeros.sum())} zero cells replaced by epsilon={eps:g}; "
                    f"check sensitivity with epsilon={eps / 10:g}")
    return nv, np.where(zeros, eps, nv), bool(np.any(zeros))


# ------------------------------------------------------------------------------
# Lagrangian algorithm
# ------------------------------------------------------------------------------
def _lagrangian_direction(param: MLLParameterization, C: sparse.csr_matrix, n: np.ndarray,
                          m: np.ndarray, ridge: float) -> Tuple[np.ndarray, np.ndarray]:
    """``u(m)`` and ``C' lambda(m)``."""
    if C.shape[1] == 0:
        return n / m - 1.0, np.zeros(0)
    LC = param.jacobian_product(m, C)
    h = param.constrained_values(m, C)
    K = LC.T @ (m[:, None] * LC)
    tau = solve_with_ridge(K, LC.T @ (n - m) + h, ridge, "C' Lambda' D_m Lambda C")
    return n / m - 1.0 - LC @ tau, h


def fit_lagrangian(n: Table, spec: ModelSpec, opts: Optional[FitOptions] = None,
                   progress_callback: ProgressCallback = None) -> FitResult:
    """
    Fit ``spec`` to the counts ``n`` with the Lagrangian iteration.

    A step is accepted when ``||u||_2`` decreases; after ``max_halvings``
    halvings without decrease the fit stops as a stall.
    """
    opts = opts or FitOptions()
    param, C = spec.param, spec.C
    nv, nw, eps_flag = _observed(n, spec, opts.zero_cell_epsilon)
    m = nw.copy()
    history: List[float] = []
    converged = False
    it = 0
    report_progress(progress_callback, f"Lagrangian fit: {param.n_components} components, {C.shape[1]} constraints")
    log.info(f"FIT: lagrangian start, df={spec.df}, cells={nv.size}")

    u, h = _lagrangian_direction(param, C, nw, m, opts.ridge)
    for it in range(1, opts.max_iter + 1):
        merit = float(np.linalg.norm(u))
        history.append(merit)
        if C.shape[1] == 0 or (np.max(np.abs(h), initial=0.0) < opts.tol_constraint
                               and np.max(np.abs(u)) < opts.tol_score):
            converged = True
            break
        step = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = m * np.exp(step * u)
            try:
                u_t, h_t = _lagrangian_direction(param, C, nw, trial, opts.ridge)
                if np.linalg.norm(u_t) < merit:
                    accepted = True
                    break
            except PositivityError:
                pass
            step /= 2
        if not accepted:
            log.warning(f"FIT: lagrangian stalled at iteration {it} (||u||={merit:.3e})")
            break
        m, u, h = trial, u_t, h_t
        log.debug(f"FIT: lagrangian iteration {it}: ||u||={merit:.3e}, step={step:g}")
        if it % 10 == 0:
            report_progress(progress_callback, f"iteration {it}: ||u|| = {merit:.3e}")

    if not converged:
        log.warning(f"FIT: lagrangian did not converge after {it} iterations")
    return _finish(nv, m, spec, opts, it, converged, history, "lagrangian", eps_flag,
                   float(np.max(np.abs(u))) if u.size else 0.0)


# ------------------------------------------------------------------------------
# Fisher scoring
# ------------------------------------------------------------------------------
def _augmented(spec: ModelSpec) -> Tuple[MLLParameterization, sparse.csr_matrix, sparse.csr_matrix]:
    """Frequency-scale parameterization with lambda_empty free, and the matching X and C."""
    param = spec.param
    if param.include_empty:
        return param, spec.X, spec.C
    full = with_empty(param, include_empty=True)
    X = sparse.block_diag([sparse.csr_matrix(np.ones((1, 1))), spec.X], format="csr")
    C = sparse.vstack([sparse.csr_matrix((1, spec.C.shape[1])), spec.C], format="csr")
    return full, X, C


def _project(delta: np.ndarray, C: sparse.csr_matrix) -> np.ndarray:
    """Component of ``delta`` in the null space of ``C'``."""
    if C.shape[1] == 0:
        return delta
    if is_selection(C):
        out = delta.copy()
        out[C.nonzero()[0]] = 0.0
        return out
    Cd = C.toarray()
    return delta - Cd @ np.linalg.lstsq(Cd, delta, rcond=None)[0]


def _scoring_direction(full: MLLParameterization, X: sparse.csr_matrix, C: sparse.csr_matrix,
                       n: np.ndarray, m: np.ndarray, lam: np.ndarray, direct: bool,
                       ridge: float) -> np.ndarray:
    """Update of lambda for one scoring step."""
    if direct:
        g = full.jacobian_transpose(m, n - m)
        if C.shape[1] == 0:
            return g
        LC = full.jacobian_product(m, C)
        K = LC.T @ (m[:, None] * LC)
        h = C.T @ lam
        tau = solve_with_ridge(K, LC.T @ (n - m) + h, ridge, "C' Lambda' D_m Lambda C")
        return _project(g - full.jacobian_transpose(m, m[:, None] * LC) @ tau, C)
    Lam = full.jacobian(m)
    G = np.linalg.solve(Lam.T, X.toarray())
    score = G.T @ (n / m - 1.0)
    info = G.T @ (G / m[:, None])
    return X @ solve_with_ridge(info, score, ridge, "Fisher information")


def _start(full: MLLParameterization, X: sparse.csr_matrix, nw: np.ndarray,
           inner: int) -> Tuple[np.ndarray, np.ndarray]:
    lam = X @ _coefficients(X, full.values(nw))
    try:
        return lam, invert(full, lam, max_iter=inner).flat
    except InversionError:
        log.info("FIT: projected start not invertible, starting from the uniform table")
    uniform = np.full(nw.size, nw.sum() / nw.size)
    lam = X @ _coefficients(X, full.values(uniform))
    return lam, invert(full, lam, max_iter=inner).flat


def fit_scoring(n: Table, spec: ModelSpec, opts: Optional[FitOptions] = None,
                progress_callback: ProgressCallback = None) -> FitResult:
    """
    Fit ``spec`` by Fisher scoring on the freedom form.

    Steps are accepted when the log-likelihood does not decrease; a failed
    inner inversion counts as a rejected step.
    """
    opts = opts or FitOptions(algorithm="scoring")
    nv, nw, eps_flag = _observed(n, spec, opts.zero_cell_epsilon)
    full, X, C = _augmented(spec)
    direct = opts.direct_update if opts.direct_update is not None else nv.size > settings.DIRECT_LAMBDA_THRESHOLD
    report_progress(progress_callback, f"Fisher scoring: {spec.n_free} free parameters"
                               f"{' (direct lambda update)' if direct else ''}")
    log.info(f"FIT: scoring start, df={spec.df}, cells={nv.size}, direct={direct}")

    lam, m = _start(full, X, nw, opts.inner_sweeps)
    ll = loglik(m, nw)
    history = [ll]
    converged = False
    size = float("inf")
    it = 0
    for it in range(1, opts.max_iter + 1):
        delta = _scoring_direction(full, X, C, nw, m, lam, direct, opts.ridge)
        size = float(np.max(np.abs(delta))) if delta.size else 0.0
        if size < opts.tol_score:
            converged = True
            break
        step = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            lam_t = lam + step * delta
            try:
                m_t = invert(full, lam_t, max_iter=opts.inner_sweeps).flat
                ll_t = loglik(m_t, nw)
                if ll_t >= ll - 1e-12:
                    accepted = True
                    break
            except (InversionError, PositivityError) as e:
                log.debug(f"FIT: inner inversion failed at step {step:g}: {e}")
            step /= 2
        if not accepted:
            log.warning(f"FIT: scoring stalled at iteration {it} (|delta|={size:.3e})")
            break
        lam, m, ll = lam_t, m_t, ll_t
        history.append(ll)
        log.debug(f"FIT: scoring iteration {it}: loglik={ll:.10g}, |delta|={size:.3e}, step={step:g}")
        if it % 10 == 0:
            report_progress(progress_callback, f"iteration {it}: loglik = {ll:.6f}")

    if not converged:
        log.warning(f"FIT: scoring did not converge after {it} iterations")
    return _finish(nv, m, spec, opts, it, converged, history, "scoring", eps_flag, size)


def fit(n: Table, spec: ModelSpec, opts: Optional[FitOptions] = None,
        progress_callback: ProgressCallback = None) -> FitResult:
    """Dispatch on ``opts.algorithm``."""
    opts = opts or FitOptions()
    if opts.algorithm == "scoring":
        return fit_scoring(n, spec, opts, progress_callback)
    return fit_lagrangian(n, spec, opts, progress_callback)


# ------------------------------------------------------------------------------
# Result assembly and covariances
# ------------------------------------------------------------------------------
def _finish(nv: np.ndarray, m: np.ndarray, spec: ModelSpec, opts: FitOptions, iterations: int,
            converged: bool, history: List[float], algorithm: str, eps_flag: bool,
            score_norm: float) -> FitResult:
    param = spec.param
    N = float(nv.sum())
    lam = param.values(m)
    violation = float(np.max(np.abs(spec.C.T @ lam))) if spec.C.shape[1] else 0.0
    if converged and violation >= opts.tol_constraint:
        log.warning(f"FIT: constraint violation {violation:.3e} above tolerance at convergence")
        converged = False
    G2 = g2_saturated(nv, m)
    deviation = abs(float(m.sum()) - N)
    if spec.is_zero_effect_model and deviation > 1e-8 * max(N, 1.0):
        log.warning(f"FIT: fitted total deviates from N by {deviation:.3e}")
    result = FitResult(
        m_hat=Table.from_counts(spec.scheme, m.reshape(spec.scheme.shape)),
        lambda_hat=ParamVector(values=lam, labels=param.labels),
        beta_hat=_coefficients(spec.X, lam),
        G2=G2, df=spec.df,
        p_value=float(chi2.sf(G2, spec.df)) if spec.df > 0 else 1.0,
        bic=0.0, iterations=iterations, converged=converged,
        max_constraint_violation=violation, score_norm=score_norm, epsilon_flag=eps_flag,
        total_deviation=deviation, history=history, algorithm=algorithm, N=N)
    result.bic = bic(result, N)
    if converged and opts.compute_covariance:
        result.cov_m, result.cov_beta = covariances(result, spec)
        result.cov_m_diag = np.diag(result.cov_m) if result.cov_m is not None else _cov_m_diagonal(result, spec)
    log.info(f"FIT: {algorithm} {'converged' if converged else 'stopped'} after {iterations} iterations, "
             f"G2={G2:.4f}, df={spec.df}")
    return result


def _constraint_terms(m: np.ndarray, spec: ModelSpec) -> Tuple[np.ndarray, np.ndarray]:
    """``D_m Lambda C`` and ``(C' Lambda' D_m Lambda C)^-1``."""
    LC = spec.param.jacobian_product(m, spec.C)
    DLC = m[:, None] * LC
    K = LC.T @ DLC
    return DLC, np.linalg.pinv(K, hermitian=True)


def _cov_m_diagonal(fit: FitResult, spec: ModelSpec) -> np.ndarray:
    m = fit.m_hat.flat
    diag = m - m ** 2 / fit.N
    if spec.C.shape[1]:
        DLC, Kinv = _constraint_terms(m, spec)
        diag = diag - np.einsum("ij,jk,ik->i", DLC, Kinv, DLC)
    return diag


def covariances(fit: FitResult, spec: ModelSpec) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """
    Asymptotic covariances of ``m_hat`` and ``beta_hat`` under multinomial sampling.

    ``cov_m = D_m - D_m Lambda C (C' Lambda' D_m Lambda C)^-1 C' Lambda' D_m - m m' / N``;
    ``cov_beta`` maps ``Lambda' cov_m Lambda`` through ``(X'X)^-1 X'``.
    Returns ``(None, None)`` above ``COVARIANCE_MAX_CELLS`` cells.

    :raises EstimationError: if the fit did not converge
    """
    if not fit.converged:
        raise EstimationError("covariances need a converged fit")
    m = fit.m_hat.flat
    if m.size > settings.COVARIANCE_MAX_CELLS:
        log.info(f"FIT: {m.size} cells, dense covariance matrices skipped")
        return None, None
    cov_m = np.diag(m) - np.outer(m, m) / fit.N
    if spec.C.shape[1]:
        DLC, Kinv = _constraint_terms(m, spec)
        cov_m = cov_m - DLC @ Kinv @ DLC.T
    cov_m = (cov_m + cov_m.T) / 2.0
    Lam = spec.param.jacobian(m)
    cov_lam = Lam.T @ cov_m @ Lam
    X = spec.X.toarray()
    A = np.linalg.solve(X.T @ X, X.T)
    cov_beta = A @ cov_lam @ A.T
    return cov_m, (cov_beta + cov_beta.T) / 2.0
