# Filename: logic/gee.py
"""
Generalized estimating equations for marginal log-linear models.

Only the declared marginal tables ``y = M'n`` enter: the marginal means
``mu`` are estimated under the linear constraints of the model on the
components housed in those marginals. The working covariance of ``y`` is
assembled pairwise; by default every pair of marginals is taken to be
conditionally independent given their intersection, so the joint table
is never needed.

Two solvers are offered:

- ``tau``: the constrained form ``y - mu + V Lambda_mu C tau = 0`` with
  ``C' lambda(mu) = 0``, solved by linearizing the constraints around the
  current ``mu`` (``V`` evaluated at the current ``mu``).
- ``score``: the tangent-score form ``W' D_mu V^+ (y - mu) = 0`` with ``W``
  spanning the tangent space of the constraint surface in ``log mu``; under
  multinomial sampling ``W`` also holds every marginal total fixed.

Both share the sandwich covariance computed by :func:`sandwich`.
"""

import logging
import warnings
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy import sparse

from config import settings
from core.exceptions import EstimationError, SchemeError
from core.scheme import Effect, VariableScheme
from core.table import Table, marginal_array, marginal_index
from .estimation import ProgressCallback, report_progress, solve_with_ridge
from .modelspec import ModelSpec, complement_basis, is_selection
from .parameterization import ParamVector

log = logging.getLogger(__name__)

PairModel = Callable[[Effect, float], np.ndarray]


# ------------------------------------------------------------------------------
# Options and results
# ------------------------------------------------------------------------------
class GeeOptions(BaseModel):
    """
    Settings of one GEE fit.

    :ivar working: ``independence-CI`` (pairwise conditional independence) or ``user``
    :ivar pair_model: Pairwise joint tables for ``working="user"``, see :func:`pairs_from_joint`
    :ivar sampling: ``multinomial`` keeps the ``-mu mu'/N`` term, ``poisson`` drops it
    :ivar solver: ``tau`` or ``score``
    :ivar marginals: Declared marginals; by default those housing a constrained component
    :ivar zero_cell_epsilon: Value substituted for observed zero marginal cells
    :ivar tol: Convergence bound on the residual and the constraints
    :ivar max_iter: Iteration budget
    :ivar max_halvings: Step halvings before a stall is declared
    :ivar ridge: Ridge added to singular systems
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    working: Literal["independence-CI", "user"] = "independence-CI"
    pair_model: Optional[PairModel] = None
    sampling: Literal["multinomial", "poisson"] = "multinomial"
    solver: Literal["tau", "score"] = "tau"
    marginals: Optional[List[Effect]] = None
    zero_cell_epsilon: float = Field(default=settings.ZERO_CELL_EPSILON, gt=0, lt=1)
    tol: float = Field(default=settings.GEE_TOL, gt=0)
    max_iter: int = Field(default=settings.GEE_MAX_ITER, ge=1)
    max_halvings: int = Field(default=settings.MAX_HALVINGS, ge=0)
    ridge: float = Field(default=settings.RIDGE, gt=0)

    @model_validator(mode="after")
    def _check_working(self) -> "GeeOptions":
        if self.working == "user" and self.pair_model is None:
            raise ValueError("working='user' needs a pair_model")
        return self


class GeeResult(BaseModel):
    """
    Outcome of a GEE fit.

    ``beta_tilde`` are the coordinates of ``lambda_tilde`` in an orthonormal
    (or selection) basis of the unconstrained directions of the declared
    components; ``beta_labels`` name them when the basis is a selection.

    :ivar beta_tilde: Free coefficients
    :ivar beta_labels: Component labels of the coefficients (selection basis only)
    :ivar lambda_tilde: Components housed in the declared marginals
    :ivar mu_tilde: Stacked marginal expected frequencies
    :ivar marginals: Declared marginals, in stacking order
    :ivar sandwich_cov: Robust covariance of ``beta_tilde``
    :ivar model_cov: Working-model covariance of ``beta_tilde``
    :ivar lambda_cov: Robust covariance of ``lambda_tilde``
    :ivar converged: Whether the stopping rule was met
    :ivar iterations: Iterations used
    :ivar residual: Last residual
    :ivar max_constraint_violation: ``max |C' lambda_tilde|``
    :ivar epsilon_flag: True when observed zero marginal cells were replaced
    :ivar solver: Solver used
    :ivar N: Sample size
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    beta_tilde: np.ndarray
    beta_labels: Optional[Tuple[str, ...]] = None
    lambda_tilde: ParamVector
    mu_tilde: np.ndarray
    marginals: List[Effect]
    sandwich_cov: Optional[np.ndarray] = None
    model_cov: Optional[np.ndarray] = None
    lambda_cov: Optional[np.ndarray] = None
    converged: bool
    iterations: int
    residual: float
    max_constraint_violation: float
    epsilon_flag: bool = False
    solver: str = "tau"
    N: float = 0.0

    _spec: ModelSpec = PrivateAttr(default=None)
    _options: GeeOptions = PrivateAttr(default=None)

    @property
    def beta_se(self) -> Optional[np.ndarray]:
        if self.sandwich_cov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.sandwich_cov), 0.0, None))


# ------------------------------------------------------------------------------
# Working covariance
# ------------------------------------------------------------------------------
def pairs_from_joint(table: Table) -> PairModel:
    """
    Working model whose pairwise tables are the marginals of ``table``,
    rescaled to the requested sample size.
    """
    probs = table.normalized().cells
    scheme = table.scheme

    def pair_table(union: Effect, N: float) -> np.ndarray:
        return N * marginal_array(probs, scheme, union)

    return pair_table


def _segments(scheme: VariableScheme, marginals: List[Effect]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([scheme.cells_of(m) for m in marginals])]).astype(int)


def _ci_union(scheme: VariableScheme, Mi: Effect, Mj: Effect,
              mui: np.ndarray, muj: np.ndarray) -> np.ndarray:
    """``mu_i mu_j / mu_(i&j)`` on the cells of ``Mi | Mj``, flat."""
    union = Mi | Mj
    shared = Mi & Mj
    sub = scheme.sub_scheme(union)
    idx_i = marginal_index(sub, Mi.relative_to(union))
    idx_j = marginal_index(sub, Mj.relative_to(union))
    idx_s = marginal_index(sub, shared.relative_to(union))
    if shared.is_empty:
        mus = np.array([mui.sum()])
    else:
        mus = marginal_array(mui.reshape(scheme.shape_of(Mi)), scheme.sub_scheme(Mi),
                             shared.relative_to(Mi)).reshape(-1)
    return mui[idx_i] * muj[idx_j] / mus[idx_s]


def _cross_block(scheme: VariableScheme, Mi: Effect, Mj: Effect, union_cells: np.ndarray) -> np.ndarray:
    """``M_i' D_t M_j`` for a table ``t`` over ``Mi | Mj``."""
    union = Mi | Mj
    sub = scheme.sub_scheme(union)
    idx_i = marginal_index(sub, Mi.relative_to(union))
    idx_j = marginal_index(sub, Mj.relative_to(union))
    block = np.zeros((scheme.cells_of(Mi), scheme.cells_of(Mj)))
    np.add.at(block, (idx_i, idx_j), np.asarray(union_cells, dtype=float).reshape(-1))
    return block


def marginal_cov(scheme: VariableScheme, marginals: List[Effect], mu: np.ndarray, N: float,
                 pair_model: Union[Table, PairModel, None] = None,
                 sampling: str = "multinomial") -> np.ndarray:
    """
    Covariance of the stacked marginal counts ``y = M'n``.

    Diagonal blocks are ``D_mu_i - mu_i mu_i'/N``; off-diagonal blocks are
    ``M_i' D_t M_j - mu_i mu_j'/N`` where ``t`` is the joint table of
    ``Mi | Mj`` given by ``pair_model`` (a joint :class:`Table` or a
    callable ``(union, N) -> cells``) or, when it is None, by conditional
    independence of ``Mi - Mj`` and ``Mj - Mi`` given ``Mi & Mj``. Poisson
    sampling drops every ``mu mu'/N`` term.

    :raises SchemeError: if ``mu`` does not match the marginals
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    for m in marginals:
        scheme.check(m)
    seg = _segments(scheme, marginals)
    if mu.size != seg[-1]:
        raise SchemeError(f"mu has {mu.size} entries, the marginals have {seg[-1]} cells")
    if isinstance(pair_model, Table):
        if pair_model.scheme != scheme:
            raise SchemeError("joint table and marginals use different schemes")
        pair_model = pairs_from_joint(pair_model)
    multinomial = sampling == "multinomial"
    V = np.zeros((mu.size, mu.size))
    parts = [mu[seg[i]:seg[i + 1]] for i in range(len(marginals))]
    for i, Mi in enumerate(marginals):
        si = slice(seg[i], seg[i + 1])
        V[si, si] = np.diag(parts[i])
        if multinomial:
            V[si, si] -= np.outer(parts[i], parts[i]) / N
        for j in range(i + 1, len(marginals)):
            Mj = marginals[j]
            sj = slice(seg[j], seg[j + 1])
            if pair_model is None:
                union_cells = _ci_union(scheme, Mi, Mj, parts[i], parts[j])
            else:
                union_cells = pair_model(Mi | Mj, N)
            block = _cross_block(scheme, Mi, Mj, union_cells)
            if multinomial:
                block -= np.outer(parts[i], parts[j]) / N
            V[si, sj] = block
            V[sj, si] = block.T
    return V


def empirical_cov(n: Table, marginals: List[Effect], sampling: str = "multinomial") -> np.ndarray:
    """
    Empirical covariance of the stacked observed marginals ``y = M'n``.

    Under Poisson sampling this is ``M' D_n M``. Under multinomial sampling
    it is ``M' D_n M - y y'/N``; the two agree on every direction that
    keeps the marginal totals fixed, which is where the estimating equations
    live.
    """
    y = np.concatenate([marginal_array(n.cells, n.scheme, m).reshape(-1) for m in marginals])
    return marginal_cov(n.scheme, marginals, y, n.total, pair_model=pairs_from_joint(n), sampling=sampling)


# ------------------------------------------------------------------------------
# Declared marginals and their components
# ------------------------------------------------------------------------------
class _Layout(BaseModel):
    """Declared marginals, their housed blocks and the constraint rows on them."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ModelSpec
    marginals: List[Effect]
    segments: np.ndarray
    blocks: List[Tuple[int, int, slice]]
    components: np.ndarray
    Cd: np.ndarray

    @property
    def scheme(self) -> VariableScheme:
        return self.spec.scheme

    def split(self, mu: np.ndarray) -> List[np.ndarray]:
        return [mu[self.segments[i]:self.segments[i + 1]].reshape(self.scheme.shape_of(m))
                for i, m in enumerate(self.marginals)]

    def lam(self, mu: np.ndarray) -> np.ndarray:
        parts = self.split(mu)
        out = np.empty(self.components.size)
        for k, i, local in self.blocks:
            out[local] = self.spec.param.blocks[k].evaluate(parts[i])
        return out

    def gradient(self, mu: np.ndarray) -> np.ndarray:
        """``d lambda / d mu`` as (stacked cells x declared components)."""
        parts = self.split(mu)
        out = np.zeros((mu.size, self.components.size))
        for k, i, local in self.blocks:
            out[self.segments[i]:self.segments[i + 1], local] = self.spec.param.blocks[k].gradient(parts[i])
        return out

    def constraints(self, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """``H = d(C' lambda)/d mu`` and ``h = C' lambda(mu)``."""
        if self.Cd.shape[1] == 0:
            return np.zeros((0, mu.size)), np.zeros(0)
        return (self.gradient(mu) @ self.Cd).T, self.lam(mu) @ self.Cd


def _declared(spec: ModelSpec, requested: Optional[List[Effect]]) -> List[int]:
    param = spec.param
    marginals = list(param.sequence.marginals)
    if requested is not None:
        idx = []
        for m in requested:
            if m not in marginals:
                raise SchemeError(f"{spec.scheme.label(m)} is not a marginal of the sequence")
            idx.append(marginals.index(m))
        return sorted(set(idx))
    C = sparse.csr_matrix(spec.C)
    rows = np.unique(C.nonzero()[0])
    touched = sorted({param.block_marginals[k] for k in range(len(param.blocks))
                      if np.any((rows >= param.block_slice(k).start) & (rows < param.block_slice(k).stop))})
    if touched:
        return touched
    # unconstrained: every marginal but the full table, unless that is all there is
    return list(range(len(marginals) - 1)) or [0]


def _layout(spec: ModelSpec, requested: Optional[List[Effect]]) -> _Layout:
    param = spec.param
    if param.include_empty:
        raise SchemeError("GEE works on parameterizations without the empty effect")
    chosen = _declared(spec, requested)
    marginals = [param.sequence.marginals[i] for i in chosen]
    blocks, comps, pos = [], [], 0
    for k, block_marg in enumerate(param.block_marginals):
        if block_marg not in chosen:
            continue
        sl = param.block_slice(k)
        width = sl.stop - sl.start
        blocks.append((k, chosen.index(block_marg), slice(pos, pos + width)))
        comps.extend(range(sl.start, sl.stop))
        pos += width
    comps = np.asarray(comps, dtype=int)
    C = sparse.csr_matrix(spec.C)
    outside = np.setdiff1d(np.arange(param.n_components), comps)
    if outside.size and C[outside].nnz:
        raise SchemeError("the model constrains components outside the declared marginals")
    return _Layout(spec=spec, marginals=marginals, segments=_segments(spec.scheme, marginals),
                   blocks=blocks, components=comps, Cd=C[comps].toarray())


def _free_basis(layout: _Layout) -> Tuple[np.ndarray, Optional[Tuple[str, ...]]]:
    Cd = layout.Cd
    labels = layout.spec.param.labels
    if Cd.shape[1] == 0 or is_selection(sparse.csr_matrix(Cd)):
        free = np.nonzero(~np.any(Cd != 0, axis=1))[0]
        X = np.eye(Cd.shape[0])[:, free]
        return X, tuple(labels[layout.components[i]] for i in free)
    return complement_basis(Cd, require_full_rank=False), None


def _observed(n: Table, layout: _Layout, eps: float) -> Tuple[np.ndarray, np.ndarray, bool]:
    if n.scheme != layout.scheme:
        raise SchemeError("table and model use different schemes")
    if n.kind != "counts":
        raise SchemeError("GEE needs a table of counts")
    y = np.concatenate([marginal_array(n.cells, n.scheme, m).reshape(-1) for m in layout.marginals])
    zeros = y == 0
    if np.any(zeros):
        log.warning(f"GEE: {int(zeros.sum())} zero marginal cells replaced by epsilon={eps:g}")
    return y, np.where(zeros, eps, y), bool(np.any(zeros))


# ------------------------------------------------------------------------------
# Solvers
# ------------------------------------------------------------------------------
class _Workspace(BaseModel):
    """Per-fit state shared by both solvers."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    layout: _Layout
    y: np.ndarray
    N: float
    opts: GeeOptions

    def cov(self, mu: np.ndarray) -> np.ndarray:
        return marginal_cov(self.layout.scheme, self.layout.marginals, mu, self.N,
                            pair_model=self.opts.pair_model, sampling=self.opts.sampling)

    def rescale(self, mu: np.ndarray) -> np.ndarray:
        """Multinomial: every marginal keeps the observed total."""
        if self.opts.sampling != "multinomial":
            return mu
        seg = self.layout.segments
        out = mu.copy()
        for i in range(len(self.layout.marginals)):
            s = slice(seg[i], seg[i + 1])
            out[s] *= self.y[s].sum() / mu[s].sum()
        return out


def _tau_target(ws: _Workspace, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``y + V H' tau`` with ``tau`` from the constraints linearized at ``mu``; also ``h``."""
    H, h = ws.layout.constraints(mu)
    if H.shape[0] == 0:
        return ws.y.copy(), h
    V = ws.cov(mu)
    VH = V @ H.T
    tau = -solve_with_ridge(H @ VH, h + H @ (ws.y - mu), ws.opts.ridge, "H V H'")
    return ws.y + VH @ tau, h


def _tau_merit(ws: _Workspace, mu: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    target, h = _tau_target(ws, mu)
    return float(np.max(np.abs(target - mu) / mu)), target, h


def _solve_tau(ws: _Workspace, progress_callback: ProgressCallback) -> Tuple[np.ndarray, int, float, bool]:
    opts = ws.opts
    mu = ws.y.copy()
    merit, target, h = _tau_merit(ws, mu)
    for it in range(1, opts.max_iter + 1):
        if merit < opts.tol and (h.size == 0 or np.max(np.abs(h)) < opts.tol):
            return mu, it - 1, merit, True
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = mu + step * (target - mu)
            if np.all(trial > 0):
                t_merit, t_target, t_h = _tau_merit(ws, trial)
                if t_merit < merit:
                    break
            step /= 2.0
        else:
            log.warning(f"GEE: tau iteration stalled at iteration {it} (residual {merit:.3e})")
            return mu, it, merit, False
        mu, merit, target, h = trial, t_merit, t_target, t_h
        log.debug(f"GEE: iteration {it}, step {step:g}, residual {merit:.3e}")
        if it % 10 == 0:
            report_progress(progress_callback, f"iteration {it}: residual = {merit:.3e}")
    converged = merit < opts.tol and (h.size == 0 or np.max(np.abs(h)) < opts.tol)
    return mu, opts.max_iter, merit, converged


def _tangent(layout: _Layout, mu: np.ndarray, sampling: str) -> np.ndarray:
    """
    Basis ``W`` of the directions in ``log mu`` that keep ``C' lambda`` fixed
    to first order; under multinomial sampling every marginal total is held
    fixed as well, so ``D_mu W`` lies in the range of the working covariance.
    """
    H, _ = layout.constraints(mu)
    rows = [H * mu[None, :]]
    if sampling == "multinomial":
        seg = layout.segments
        totals = np.zeros((len(layout.marginals), mu.size))
        for i in range(len(layout.marginals)):
            totals[i, seg[i]:seg[i + 1]] = mu[seg[i]:seg[i + 1]]
        rows.append(totals)
    A = np.vstack(rows)
    if A.shape[0] == 0:
        return np.eye(mu.size)
    return scipy.linalg.null_space(A)


def _score_terms(ws: _Workspace, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Update direction in ``log mu`` and the merit ``max|s|/N + max|h|``."""
    H, h = ws.layout.constraints(mu)
    Vp = np.linalg.pinv(ws.cov(mu), hermitian=True)
    W = _tangent(ws.layout, mu, ws.opts.sampling)
    T = mu[:, None] * W
    s = T.T @ Vp @ (ws.y - mu)
    info = T.T @ Vp @ T
    delta = W @ np.linalg.lstsq(info, s, rcond=None)[0]
    if H.shape[0]:
        delta -= np.linalg.pinv(H * mu[None, :]) @ h
    merit = float(np.max(np.abs(s)) / max(ws.N, 1.0)) + (float(np.max(np.abs(h))) if h.size else 0.0)
    return delta, h, merit


def _solve_score(ws: _Workspace, progress_callback: ProgressCallback) -> Tuple[np.ndarray, int, float, bool]:
    opts = ws.opts
    mu = ws.y.copy()
    delta, h, merit = _score_terms(ws, mu)
    size = float(np.max(np.abs(delta))) if delta.size else 0.0
    for it in range(1, opts.max_iter + 1):
        if size < opts.tol and (h.size == 0 or np.max(np.abs(h)) < opts.tol):
            return mu, it - 1, size, True
        step = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = ws.rescale(mu * np.exp(step * delta))
            t_delta, t_h, t_merit = _score_terms(ws, trial)
            if t_merit < merit:
                break
            step /= 2.0
        else:
            log.warning(f"GEE: score iteration stalled at iteration {it} (step size {size:.3e})")
            return mu, it, size, False
        mu, delta, h, merit = trial, t_delta, t_h, t_merit
        size = float(np.max(np.abs(delta))) if delta.size else 0.0
        log.debug(f"GEE: iteration {it}, step {step:g}, |delta| {size:.3e}")
        if it % 10 == 0:
            report_progress(progress_callback, f"iteration {it}: |delta| = {size:.3e}")
    converged = size < opts.tol and (h.size == 0 or np.max(np.abs(h)) < opts.tol)
    return mu, opts.max_iter, size, converged


def fit_gee(n: Table, spec: ModelSpec, opts: Optional[GeeOptions] = None,
            progress_callback: ProgressCallback = None) -> GeeResult:
    """
    Fit ``spec`` to the declared marginals of ``n`` by GEE.

    Starts at the (epsilon-adjusted) observed marginals with ``tau = 0``.
    The sandwich covariance is attached when the fit converged.

    :raises SchemeError: if the model constrains components of undeclared marginals
    """
    opts = opts or GeeOptions()
    layout = _layout(spec, opts.marginals)
    y, y_work, eps_flag = _observed(n, layout, opts.zero_cell_epsilon)
    ws = _Workspace(layout=layout, y=y_work, N=n.total, opts=opts)
    labels = ", ".join(spec.scheme.label(m) for m in layout.marginals)
    log.info(f"GEE: {opts.solver} solver on marginals {labels}, {layout.Cd.shape[1]} constraints, "
             f"working model {opts.working}, {opts.sampling} sampling")
    report_progress(progress_callback, f"GEE on {y.size} marginal cells")

    solve = _solve_tau if opts.solver == "tau" else _solve_score
    mu, iterations, residual, converged = solve(ws, progress_callback)
    if not converged:
        log.warning(f"GEE: not converged after {iterations} iterations (residual {residual:.3e})")

    lam = layout.lam(mu)
    violation = float(np.max(np.abs(lam @ layout.Cd))) if layout.Cd.shape[1] else 0.0
    X, beta_labels = _free_basis(layout)
    comp_labels = tuple(spec.param.labels[i] for i in layout.components)
    result = GeeResult(beta_tilde=X.T @ lam, beta_labels=beta_labels,
                       lambda_tilde=ParamVector(values=lam, labels=comp_labels),
                       mu_tilde=mu, marginals=layout.marginals, converged=converged,
                       iterations=iterations, residual=residual,
                       max_constraint_violation=violation, epsilon_flag=eps_flag,
                       solver=opts.solver, N=n.total)
    result._spec = spec
    result._options = opts
    if converged:
        try:
            robust, model_based, lam_cov = _sandwich_parts(result, n, layout, X)
            result.sandwich_cov, result.model_cov, result.lambda_cov = robust, model_based, lam_cov
        except (EstimationError, np.linalg.LinAlgError) as e:
            log.warning(f"GEE: sandwich covariance unavailable: {e}")
    log.info(f"GEE: finished after {iterations} iterations, converged={converged}")
    return result


# ------------------------------------------------------------------------------
# Sandwich covariance
# ------------------------------------------------------------------------------
def _sandwich_parts(result: GeeResult, n: Table, layout: _Layout,
                    X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Robust and model-based covariances of ``beta_tilde`` plus the robust
    covariance of the declared lambda components.

    The meat uses :func:`empirical_cov`, i.e. ``M' D_n M - y y'/N`` under
    multinomial sampling and ``M' D_n M`` under Poisson sampling.
    """
    opts = result._options
    mu = result.mu_tilde
    N = result.N
    ws = _Workspace(layout=layout, y=mu, N=N, opts=opts)
    Vp = np.linalg.pinv(ws.cov(mu), hermitian=True)
    V_star = empirical_cov(n, layout.marginals, opts.sampling)
    W = _tangent(layout, mu, opts.sampling)
    T = mu[:, None] * W
    info = T.T @ Vp @ T
    if not np.all(np.isfinite(info)):
        raise EstimationError("the GEE information matrix is not finite")
    info_inv = np.linalg.pinv(info, hermitian=True)
    meat = T.T @ Vp @ V_star @ Vp @ T
    G = (layout.gradient(mu).T * mu[None, :]) @ W
    lam_robust = G @ info_inv @ meat @ info_inv @ G.T
    lam_model = G @ info_inv @ G.T
    lam_robust = (lam_robust + lam_robust.T) / 2.0
    lam_model = (lam_model + lam_model.T) / 2.0
    if np.min(np.linalg.eigvalsh(lam_robust)) < -1e-8 * max(1.0, float(np.max(np.abs(lam_robust)))):
        warnings.warn("sandwich covariance has a clearly negative eigenvalue", RuntimeWarning)
    return X.T @ lam_robust @ X, X.T @ lam_model @ X, lam_robust


def sandwich(result: GeeResult, n: Table) -> np.ndarray:
    """
    Robust covariance ``I^+ J I^+`` of ``beta_tilde`` with ``J`` built from
    the empirical second moments ``M' D_n M`` of the declared marginals.

    :raises EstimationError: if the fit did not converge or did not come from :func:`fit_gee`
    """
    if result._spec is None:
        raise EstimationError("sandwich needs a result produced by fit_gee")
    if not result.converged:
        raise EstimationError("sandwich covariance requested for a non-converged GEE fit")
    layout = _layout(result._spec, result.marginals)
    X, _ = _free_basis(layout)
    robust, _, _ = _sandwich_parts(result, n, layout, X)
    return robust
