# Filename: logic/parameterization.py
"""
Hierarchical and complete marginal log-linear parameterizations.

A parameterization houses every effect in the first marginal of a
non-decreasing sequence that contains it and realizes
``lambda = B' log M' m`` block by block. Besides evaluation it offers the
Jacobian ``Lambda = M diag(M'm)^-1 B``, the inverse map (mixed
parameterization + IPF, or a global Newton solve) and the smoothness /
collapsibility diagnostics.
"""

import logging
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr
from scipy import sparse

from config import settings
from core.exceptions import InversionError, PositivityError, SchemeError
from core.scheme import Effect, VariableScheme
from core.sequence import (DecomposabilityReport, MarginalSequence, assign_effects,
                           is_ordered_decomposable)
from core.table import Table, marginal_array, marginal_index, marginalization_matrix
from .contrasts import CodingKind, ContrastBlock, contract, contrast_matrix, loglinear_recursion

log = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
# Component labels
# ------------------------------------------------------------------------------
class Component(BaseModel):
    """
    One entry of the parameter vector.

    :ivar marginal: Marginal the component is computed in
    :ivar effect: Its effect
    :ivar categories: Category of each effect variable (0-based, all >= 1)
    :ivar label: Display label ``marginal|effect|categories``
    """
    model_config = ConfigDict(frozen=True)

    marginal: Effect
    effect: Effect
    categories: Tuple[int, ...]
    label: str


class ParamVector(BaseModel):
    """
    Values aligned with :attr:`MLLParameterization.components`.

    :ivar values: Component values
    :ivar labels: Matching labels
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    labels: Tuple[str, ...]

    def as_dict(self) -> Dict[str, float]:
        return {k: float(v) for k, v in zip(self.labels, self.values)}

    def __len__(self) -> int:
        return len(self.labels)


# ------------------------------------------------------------------------------
# The parameterization
# ------------------------------------------------------------------------------
class MLLParameterization(BaseModel):
    """
    Marginal log-linear parameterization over a non-decreasing sequence.

    :ivar scheme: Variable scheme
    :ivar sequence: Marginal sequence
    :ivar coding: Default odds-ratio coding
    :ivar include_empty: Whether lambda_empty is a component (frequency scale)
    :ivar blocks: One contrast block per effect, ordered by marginal then effect size
    :ivar block_marginals: Sequence index of every block
    :ivar decomposability: Ordered-decomposability verdict of the sequence
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scheme: VariableScheme
    sequence: MarginalSequence
    coding: CodingKind = "local"
    include_empty: bool = False
    blocks: Tuple[ContrastBlock, ...]
    block_marginals: Tuple[int, ...]
    decomposability: DecomposabilityReport
    response: Optional[Effect] = None

    _offsets: np.ndarray = PrivateAttr(default=None)
    _components: List[Component] = PrivateAttr(default=None)
    _cache: dict = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        dims = [b.dimension for b in self.blocks]
        self._offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)

    # --- Sizes and labels ---
    @property
    def n_components(self) -> int:
        return int(self._offsets[-1])

    def block_slice(self, k: int) -> slice:
        return slice(int(self._offsets[k]), int(self._offsets[k + 1]))

    @property
    def components(self) -> List[Component]:
        if self._components is None:
            comps = []
            for block in self.blocks:
                positions = block.effect.positions()
                widths = [self.scheme.variables[p].levels - 1 for p in positions]
                marg = self.scheme.label(block.marginal)
                eff = self.scheme.label(block.effect)
                for k in range(block.dimension):
                    cats = tuple(int(d) + 1 for d in np.unravel_index(k, widths)) if widths else ()
                    names = ",".join(self.scheme.level_labels(p)[c] for p, c in zip(positions, cats))
                    comps.append(Component(marginal=block.marginal, effect=block.effect,
                                           categories=cats, label=f"{marg}|{eff}|{names or '-'}"))
            self._components = comps
        return self._components

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(c.label for c in self.components)

    def index_of(self, label: str) -> int:
        for i, c in enumerate(self.components):
            if c.label == label:
                return i
        raise SchemeError(f"unknown component label '{label}'")

    def block_of(self, effect: Effect) -> int:
        for k, b in enumerate(self.blocks):
            if b.effect == effect:
                return k
        raise SchemeError(f"effect {self.scheme.label(effect)} is not a component of this parameterization")

    def effect_slice(self, effect: Effect) -> slice:
        return self.block_slice(self.block_of(effect))

    def housed_in(self, effect: Effect) -> Effect:
        return self.blocks[self.block_of(effect)].marginal

    # --- M and B ---
    @property
    def M(self) -> sparse.csr_matrix:
        """Marginalization/lumping matrix; one column group per marginal or lumped block."""
        if "M" not in self._cache:
            self._build_matrices()
        return self._cache["M"]

    @property
    def B(self) -> sparse.csr_matrix:
        """Block-diagonal contrast matrix matching :attr:`M` (dense blocks, sparse container)."""
        if "B" not in self._cache:
            self._build_matrices()
        return self._cache["B"]

    def _column_groups(self) -> List[Tuple[int, Optional[int]]]:
        """(marginal index, lumped block or None) per M column group, with the rows of every block."""
        groups: List[Tuple[int, Optional[int]]] = []
        for k, block in enumerate(self.blocks):
            key = (self.block_marginals[k], None if block.linear else k)
            if key not in groups:
                groups.append(key)
        return groups

    def _build_matrices(self) -> None:
        groups = self._column_groups()
        m_blocks, widths = [], []
        for marg_idx, lumped in groups:
            marginal = self.sequence.marginals[marg_idx]
            mm = marginalization_matrix(self.scheme, [marginal])
            if lumped is not None:
                mm = mm @ sparse.csr_matrix(self.blocks[lumped].lumps())
            m_blocks.append(mm)
            widths.append(mm.shape[1])
        row_offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int)
        rows, cols, vals = [], [], []
        for k, block in enumerate(self.blocks):
            g = groups.index((self.block_marginals[k], None if block.linear else k))
            dense = block.columns()
            r, c = np.nonzero(dense)
            rows.append(r + row_offsets[g])
            cols.append(c + self._offsets[k])
            vals.append(dense[r, c])
        self._cache["M"] = sparse.hstack(m_blocks, format="csr")
        self._cache["B"] = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(int(row_offsets[-1]), self.n_components))

    def contrast_product(self, C) -> sparse.csr_matrix:
        """``B @ C`` built only from the blocks ``C`` touches."""
        C = sparse.csr_matrix(C)
        return self.B @ C if "B" in self._cache else self._lazy_contrast_product(C)

    def _lazy_contrast_product(self, C: sparse.csr_matrix) -> sparse.csr_matrix:
        groups = self._column_groups()
        widths = []
        for marg_idx, lumped in groups:
            if lumped is None:
                widths.append(self.scheme.cells_of(self.sequence.marginals[marg_idx]))
            else:
                widths.append(self.blocks[lumped].lumps().shape[1])
        row_offsets = np.concatenate([[0], np.cumsum(widths)]).astype(int)
        out = np.zeros((int(row_offsets[-1]), C.shape[1]))
        for k, sl, nz, rows in self._touched_blocks(C):
            block = self.blocks[k]
            g = groups.index((self.block_marginals[k], None if block.linear else k))
            out[row_offsets[g]:row_offsets[g + 1], :] += block.columns(nz) @ rows
        return sparse.csr_matrix(out)

    # --- Evaluation ---
    def marginal_tables(self, cells: np.ndarray) -> List[np.ndarray]:
        return [marginal_array(cells, self.scheme, m) for m in self.sequence.marginals]

    def _cells_to_marginal(self, marg_idx: int) -> np.ndarray:
        key = ("index", marg_idx)
        if key not in self._cache:
            self._cache[key] = marginal_index(self.scheme, self.sequence.marginals[marg_idx])
        return self._cache[key]

    def _touched_blocks(self, C: sparse.csr_matrix):
        """(block, its slice, rows of C inside the block, those rows) for every block ``C`` touches."""
        rows_nz = np.unique(C.nonzero()[0])
        owner = np.searchsorted(self._offsets, rows_nz, side="right") - 1
        for k in np.unique(owner):
            sl = self.block_slice(int(k))
            hit = rows_nz[owner == k]
            yield int(k), sl, hit - sl.start, C[hit].toarray()

    def values(self, cells: np.ndarray, columns: Optional[Sequence[int]] = None) -> np.ndarray:
        """Components of a cell array as given (no normalization), optionally only some of them."""
        cells = np.asarray(cells, dtype=float).reshape(self.scheme.shape)
        margs = self.marginal_tables(cells)
        if columns is None:
            out = np.empty(self.n_components)
            for k, block in enumerate(self.blocks):
                out[self.block_slice(k)] = block.evaluate(margs[self.block_marginals[k]])
            return out
        columns = np.asarray(columns, dtype=int)
        out = np.empty(columns.size)
        for k, block in enumerate(self.blocks):
            sl = self.block_slice(k)
            hit = np.nonzero((columns >= sl.start) & (columns < sl.stop))[0]
            if hit.size:
                out[hit] = block.evaluate(margs[self.block_marginals[k]])[columns[hit] - sl.start]
        return out

    def constrained_values(self, cells: np.ndarray, C) -> np.ndarray:
        """``C' lambda`` evaluated from the blocks ``C`` touches only."""
        cells = np.asarray(cells, dtype=float).reshape(self.scheme.shape)
        C = sparse.csr_matrix(C)
        margs = self.marginal_tables(cells)
        out = np.zeros(C.shape[1])
        for k, sl, nz, rows in self._touched_blocks(C):
            out += self.blocks[k].evaluate(margs[self.block_marginals[k]])[nz] @ rows
        return out

    def jacobian(self, cells: np.ndarray, columns: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        ``Lambda = M diag(M'm)^-1 B`` as a dense (cells x components) matrix,
        optionally restricted to a subset of component columns.
        """
        cells = np.asarray(cells, dtype=float).reshape(self.scheme.shape)
        margs = self.marginal_tables(cells)
        wanted = np.arange(self.n_components) if columns is None else np.asarray(columns, dtype=int)
        out = np.zeros((self.scheme.n_cells, wanted.size))
        for k, block in enumerate(self.blocks):
            sl = self.block_slice(k)
            hit = np.nonzero((wanted >= sl.start) & (wanted < sl.stop))[0]
            if hit.size == 0:
                continue
            grad = block.gradient(margs[self.block_marginals[k]], index=wanted[hit] - sl.start)
            out[:, hit] = grad[self._cells_to_marginal(self.block_marginals[k])]
        return out

    def jacobian_product(self, cells: np.ndarray, C) -> np.ndarray:
        """``Lambda @ C`` without forming the full Jacobian."""
        cells = np.asarray(cells, dtype=float).reshape(self.scheme.shape)
        C = sparse.csr_matrix(C)
        margs = self.marginal_tables(cells)
        out = np.zeros((self.scheme.n_cells, C.shape[1]))
        for k, sl, nz, rows in self._touched_blocks(C):
            grad = self.blocks[k].gradient(margs[self.block_marginals[k]], index=nz)
            out += (grad @ rows)[self._cells_to_marginal(self.block_marginals[k])]
        return out

    def jacobian_transpose(self, cells: np.ndarray, V: np.ndarray) -> np.ndarray:
        """``Lambda' V`` for a cell vector or a (cells x r) matrix, block by block."""
        cells = np.asarray(cells, dtype=float).reshape(self.scheme.shape)
        V = np.asarray(V, dtype=float)
        vector = V.ndim == 1
        V = V.reshape(self.scheme.shape + (-1,))
        margs = self.marginal_tables(cells)
        reduced = [marginal_array(V, self.scheme, m).reshape(-1, V.shape[-1]) for m in self.sequence.marginals]
        out = np.empty((self.n_components, V.shape[-1]))
        for k, block in enumerate(self.blocks):
            i = self.block_marginals[k]
            out[self.block_slice(k)] = block.gradient(margs[i]).T @ reduced[i]
        return out[:, 0] if vector else out


# ------------------------------------------------------------------------------
# Construction
# ------------------------------------------------------------------------------
def build(scheme: VariableScheme, sequence: MarginalSequence, coding: CodingKind = "local",
          include_empty: bool = False,
          effect_codings: Optional[Dict[Effect, CodingKind]] = None,
          response: Optional[Effect] = None) -> MLLParameterization:
    """
    Assemble the hierarchical and complete parameterization of ``sequence``.

    :param coding: Default coding for every effect
    :param include_empty: Keep lambda_empty as the first component
    :param effect_codings: Per-effect coding overrides
    :param response: Response variables for continuation coding (default: last effect variable)
    """
    if sequence.scheme != scheme:
        raise SchemeError("sequence and parameterization use different schemes")
    assignment = assign_effects(sequence)
    effect_codings = effect_codings or {}
    order = sorted(assignment.items(), key=lambda kv: (kv[1], len(kv[0]), kv[0].mask))
    blocks, block_marginals = [], []
    for effect, marg_idx in order:
        if effect.is_empty and not include_empty:
            continue
        block_response = (response & effect) if response is not None else None
        blocks.append(contrast_matrix(scheme, sequence.marginals[marg_idx], effect,
                                      effect_codings.get(effect, coding), block_response))
        block_marginals.append(marg_idx)
    report = is_ordered_decomposable(sequence)
    param = MLLParameterization(scheme=scheme, sequence=sequence, coding=coding,
                                include_empty=include_empty, blocks=tuple(blocks),
                                block_marginals=tuple(block_marginals), decomposability=report,
                                response=response)
    expected = scheme.n_cells - (0 if include_empty else 1)
    if param.n_components != expected:
        raise SchemeError(f"parameterization has {param.n_components} components, expected {expected}")
    if not report.decomposable:
        log.warning(f"PARAM: sequence {sequence.labels()} is not ordered decomposable "
                    f"(prefix {report.failing_prefix}); components are not variation independent")
    log.debug(f"PARAM: built {param.n_components} components over {sequence.labels()} ({coding})")
    return param


def with_empty(param: MLLParameterization, include_empty: bool = True) -> MLLParameterization:
    """Same parameterization with lambda_empty included (frequency scale) or dropped."""
    if param.include_empty == include_empty:
        return param
    key = f"include_empty={include_empty}"
    if key not in param._cache:
        codings = {b.effect: b.coding for b in param.blocks if b.coding != param.coding}
        param._cache[key] = build(param.scheme, param.sequence, param.coding, include_empty=include_empty,
                                  effect_codings=codings, response=param.response)
    return param._cache[key]


def compute_lambda(param: MLLParameterization, table: Table) -> ParamVector:
    """
    ``lambda = B' log(M' p)`` with ``p`` the probability version of ``table``.

    :raises PositivityError: on zero (lumped) marginal cells
    """
    if table.scheme != param.scheme:
        raise SchemeError("table and parameterization use different schemes")
    return ParamVector(values=param.values(table.normalized().cells), labels=param.labels)


def jacobian(param: MLLParameterization, m: Table) -> np.ndarray:
    """
    ``Lambda = M diag(M'm)^-1 B`` at the table ``m`` as given (any scale).

    :raises PositivityError: on zero marginal sums
    """
    return param.jacobian(m.cells)


# ------------------------------------------------------------------------------
# Inversion
# ------------------------------------------------------------------------------
def _ipf(q: np.ndarray, constraints: List[Tuple[Tuple[int, ...], np.ndarray]],
         tol: float, max_iter: int) -> Tuple[np.ndarray, int, float]:
    """
    Scale ``q`` until its margins on the listed axes match the targets.
    ``constraints`` holds (kept axes, target shaped for broadcasting).
    """
    if not constraints:
        return q / q.sum(), 0, 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        for axes, target in constraints:
            drop = tuple(a for a in range(q.ndim) if a not in axes)
            current = q.sum(axis=drop, keepdims=True) if drop else q
            q = q * np.divide(target, current, out=np.zeros_like(target * current), where=current > 0)
        residual = 0.0
        for axes, target in constraints:
            drop = tuple(a for a in range(q.ndim) if a not in axes)
            current = q.sum(axis=drop, keepdims=True) if drop else q
            residual = max(residual, float(np.max(np.abs(current - target))))
        if residual < tol:
            return q, it, residual
    return q, max_iter, residual


def _local_expansion(shape: Sequence[int], effect_axes: Sequence[int], values: np.ndarray) -> np.ndarray:
    """Full log-linear term (broadcastable to ``shape``) from non-redundant effect-coded values."""
    widths = [shape[a] - 1 for a in effect_axes]
    arr = values.reshape(widths) if widths else values.reshape(())
    mats = []
    for a in effect_axes:
        c = shape[a]
        t = np.vstack([-np.ones((1, c - 1)), np.eye(c - 1)])
        mats.append(t.T)
    full = contract(arr, mats)
    bshape = [1] * len(shape)
    for a, c in zip(effect_axes, full.shape):
        bshape[a] = c
    return full.reshape(bshape)


def _local_design(shape: Sequence[int], effect_axes_list: Sequence[Sequence[int]]) -> np.ndarray:
    """Dense design whose columns expand effect-coded terms of the listed effects."""
    cols = []
    for axes in effect_axes_list:
        width = int(np.prod([shape[a] - 1 for a in axes])) if axes else 1
        for k in range(width):
            unit = np.zeros(width)
            unit[k] = 1.0
            cols.append(np.broadcast_to(_local_expansion(shape, axes, unit), shape).reshape(-1))
    return np.column_stack(cols) if cols else np.zeros((int(np.prod(shape)), 0))


class _Step(BaseModel):
    """Per-marginal workspace of the mixed-parameterization inversion."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    shape: Tuple[int, ...]
    blocks: List[Tuple[ContrastBlock, np.ndarray, Tuple[int, ...]]] = Field(default_factory=list)
    constraints: List[Tuple[Tuple[int, ...], np.ndarray]] = Field(default_factory=list)


def _solve_step(step: _Step, tol: float, max_iter: int) -> Tuple[np.ndarray, int, float, bool]:
    """
    Distribution of one marginal: housed components fixed at their targets,
    sub-marginals shared with earlier marginals matched by IPF.
    """
    shape = step.shape
    if all(b.coding == "local" for b, _, _ in step.blocks):
        logq = np.zeros(shape)
        for _, target, axes in step.blocks:
            logq = logq + _local_expansion(shape, axes, target)
        q = np.exp(logq - logq.max())
        q, sweeps, residual = _ipf(q, step.constraints, settings.IPF_TOL, max_iter)
        return q, sweeps, residual, residual < settings.IPF_TOL

    design = _local_design(shape, [axes for _, _, axes in step.blocks])
    targets = np.concatenate([t for _, t, _ in step.blocks])
    logq = np.zeros(shape)
    q, iterations, ipf_res = _ipf(np.exp(logq), step.constraints, settings.IPF_TOL, max_iter)
    residual = np.inf
    for it in range(1, max_iter + 1):
        p = q / q.sum()
        values = np.concatenate([b.evaluate(p) for b, _, _ in step.blocks])
        residual = max(float(np.max(np.abs(targets - values))), ipf_res)
        if residual < tol:
            return q, iterations + it, residual, True
        grad = np.column_stack([b.gradient(p) for b, _, _ in step.blocks])
        jac = grad.T @ (p.reshape(-1)[:, None] * design)
        delta = np.linalg.lstsq(jac, targets - values, rcond=None)[0]
        logq = np.log(q) + (design @ delta).reshape(shape)
        q, sweeps, ipf_res = _ipf(np.exp(logq - logq.max()), step.constraints, settings.IPF_TOL, max_iter)
        iterations += sweeps
    return q, iterations, residual, False


def invert(param: MLLParameterization, lam, method: Literal["ipf", "newton"] = "ipf",
           max_iter: Optional[int] = None, tol: Optional[float] = None,
           verify_tol: float = 1e-9) -> Table:
    """
    Table whose parameters equal ``lam``.

    ``ipf`` walks the marginals in sequence order; at each step the marginal
    distribution is rebuilt from its housed components plus the sub-marginals
    it shares with earlier marginals. ``newton`` solves the whole system at
    once on local log-linear coordinates. With ``include_empty`` the result is
    an expected-frequency table whose lambda_empty matches.

    :raises InversionError: when the steps do not converge or the result does not reproduce ``lam``
    """
    values = np.asarray(getattr(lam, "values", lam), dtype=float)
    if values.size != param.n_components:
        raise SchemeError(f"expected {param.n_components} values, got {values.size}")
    max_iter = max_iter or settings.INVERT_MAX_ITER
    tol = tol or settings.INVERT_TOL
    if not param.decomposability.decomposable:
        log.info("PARAM: inverting over a non ordered-decomposable sequence; a solution may not exist")

    prob_param = param
    prob_values = values
    empty_value = None
    if param.include_empty:
        empty_value = values[0]
        prob_param = with_empty(param, include_empty=False)
        prob_values = values[1:]

    if method == "newton":
        p = _invert_newton(prob_param, prob_values, max_iter, tol)
    elif method == "ipf":
        p = _invert_ipf(prob_param, prob_values, max_iter, tol)
    else:
        raise ValueError(f"unknown inversion method '{method}'")

    achieved = prob_param.values(p)
    err = float(np.max(np.abs(achieved - prob_values))) if prob_values.size else 0.0
    if err > verify_tol:
        raise InversionError(
            f"no table reproduces the requested parameters (max error {err:.3e}); "
            "the values may be incompatible", iterations=max_iter, residual=err)
    if empty_value is None:
        return Table.from_probabilities(param.scheme, p)
    first = param.blocks[0]
    current = first.evaluate(marginal_array(p, param.scheme, first.marginal))[0]
    return Table.from_counts(param.scheme, p * np.exp(empty_value - current))


def _invert_ipf(param: MLLParameterization, values: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    scheme = param.scheme
    known: Dict[int, np.ndarray] = {}
    for i, marginal in enumerate(param.sequence.marginals):
        positions = marginal.positions()
        step = _Step(index=i, shape=scheme.shape_of(marginal))
        for k, block in enumerate(param.blocks):
            if param.block_marginals[k] != i:
                continue
            axes = tuple(positions.index(p) for p in block.effect.positions())
            step.blocks.append((block, values[param.block_slice(k)], axes))
        for j in range(i):
            shared = marginal & param.sequence.marginals[j]
            if shared.is_empty:
                continue
            earlier = param.sequence.marginals[j]
            target = marginal_array(known[j], scheme.sub_scheme(earlier),
                                    shared.relative_to(earlier))
            axes = tuple(positions.index(p) for p in shared.positions())
            bshape = [1] * len(positions)
            for a, c in zip(axes, target.shape):
                bshape[a] = c
            step.constraints.append((axes, target.reshape(bshape)))
        q, iterations, residual, converged = _solve_step(step, tol, max_iter)
        if not converged:
            raise InversionError(
                f"marginal {scheme.label(marginal)} could not be reconstructed after {iterations} "
                f"iterations (residual {residual:.3e}); the earlier marginals are incompatible",
                iterations=iterations, residual=residual, step=i)
        known[i] = q / q.sum()
        log.debug(f"PARAM: step {i + 1} ({scheme.label(marginal)}) done in {iterations} iterations")
    return known[len(param.sequence.marginals) - 1]


def _invert_newton(param: MLLParameterization, values: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    scheme = param.scheme
    shape = scheme.shape
    effects = [e for e in scheme.all_effects() if not e.is_empty]
    design = _local_design(shape, [e.positions() for e in effects])
    eta = np.zeros(design.shape[1])
    p = np.full(shape, 1.0 / scheme.n_cells)
    residual = np.inf
    for it in range(1, max_iter + 1):
        current = param.values(p)
        r = values - current
        residual = float(np.max(np.abs(r)))
        if residual < tol:
            log.debug(f"PARAM: newton inversion converged in {it} iterations")
            return p
        jac = param.jacobian(p).T @ (p.reshape(-1)[:, None] * design)
        delta = np.linalg.solve(jac, r)
        step = 1.0
        for _ in range(settings.MAX_HALVINGS):
            trial_eta = eta + step * delta
            logp = design @ trial_eta
            trial = np.exp(logp - logp.max()).reshape(shape)
            trial = trial / trial.sum()
            try:
                if np.max(np.abs(values - param.values(trial))) < residual:
                    break
            except PositivityError:
                pass
            step /= 2
        eta, p = trial_eta, trial
    raise InversionError(f"newton inversion did not converge (residual {residual:.3e})",
                         iterations=max_iter, residual=residual)


# ------------------------------------------------------------------------------
# Diagnostics
# ------------------------------------------------------------------------------
class SmoothnessReport(BaseModel):
    """
    :ivar ordered_decomposable: Ordered-decomposability verdict
    :ivar variation_independent: Same verdict, read as variation independence
    :ivar hierarchical_complete: Every effect housed exactly once
    :ivar failing_prefix: First failing prefix length, if any
    :ivar hazards: Effects registered more than once (non-smooth component lists)
    """
    ordered_decomposable: bool
    variation_independent: bool
    hierarchical_complete: bool
    failing_prefix: Optional[int] = None
    hazards: List[str] = Field(default_factory=list)


def check_smoothness(param: MLLParameterization,
                     extra_components: Optional[Iterable[Tuple[Effect, Effect]]] = None) -> SmoothnessReport:
    """
    Smoothness and variation-independence diagnostics.

    ``extra_components`` is a caller-supplied list of (marginal, effect)
    pairs; any effect appearing in two marginals is reported as a hazard,
    since such a component list cannot be part of a smooth parameterization.
    """
    housed = [b.effect for b in param.blocks]
    complete = len(set(housed)) == len(housed) == (1 << param.scheme.n_vars) - (0 if param.include_empty else 1)
    hazards = []
    if extra_components is not None:
        seen: Dict[Effect, Effect] = {}
        for marginal, effect in extra_components:
            if effect in seen and seen[effect] != marginal:
                hazards.append(
                    f"effect {param.scheme.label(effect)} appears in marginals "
                    f"{param.scheme.label(seen[effect])} and {param.scheme.label(marginal)}")
            seen.setdefault(effect, marginal)
        for h in hazards:
            log.warning(f"PARAM: {h}")
    dec = param.decomposability
    return SmoothnessReport(ordered_decomposable=dec.decomposable, variation_independent=dec.decomposable,
                            hierarchical_complete=complete, failing_prefix=dec.failing_prefix,
                            hazards=hazards)


class CollapsibilityReport(BaseModel):
    """
    :ivar collapsible: Verdict of the direct parameter comparison (authoritative)
    :ivar criterion: Verdict of the signed-sum criterion
    :ivar max_criterion: Largest absolute signed sum
    :ivar max_difference: Largest absolute parameter difference
    """
    collapsible: bool
    criterion: bool
    max_criterion: float
    max_difference: float

    @property
    def agree(self) -> bool:
        return self.collapsible == self.criterion


def collapsibility_report(table: Table, effect: Effect, M: Effect, N: Effect,
                          tol: float = 1e-9) -> CollapsibilityReport:
    """
    Compare the parameters of ``effect`` computed in the marginals ``M`` and
    ``N`` (binary schemes only), by the signed-sum criterion and directly.
    """
    scheme = table.scheme
    if not scheme.is_binary:
        raise SchemeError("collapsibility check needs binary variables")
    if effect.is_empty or not effect.issubset(M) or not M.issubset(N) or M == N:
        raise SchemeError("need a nonempty effect inside M, with M a proper subset of N")
    p = table.normalized().cells
    if np.any(p < settings.POSITIVITY_FLOOR):
        raise PositivityError("collapsibility check needs a positive table")

    p_M = marginal_array(p, scheme, M)
    p_N = marginal_array(p, scheme, N)
    m_pos, n_pos = M.positions(), N.positions()
    extra = tuple(n_pos.index(q) for q in n_pos if q not in m_pos)
    d = np.log(p_M) - np.log(p_N).mean(axis=extra)

    # signed sum over sub-effects, at every category combination of M
    criterion = np.zeros_like(d)
    for sub in effect.subsets():
        rest = tuple(m_pos.index(q) for q in m_pos if not (sub.mask >> q) & 1)
        sign = (-1) ** (len(effect) - len(sub))
        summed = d.sum(axis=rest, keepdims=True) if rest else d
        criterion = criterion + sign * summed / 2 ** len(rest)
    max_criterion = float(np.max(np.abs(criterion)))

    t_M = Table.from_probabilities(scheme.sub_scheme(M), p_M)
    t_N = Table.from_probabilities(scheme.sub_scheme(N), p_N)
    max_diff = 0.0
    for sub in effect.subsets():
        if sub.is_empty:
            continue
        a = loglinear_recursion(t_M, sub.relative_to(M))
        b = loglinear_recursion(t_N, sub.relative_to(N))
        max_diff = max(max_diff, float(np.max(np.abs(a - b))))

    report = CollapsibilityReport(collapsible=max_diff < tol, criterion=max_criterion < tol,
                                  max_criterion=max_criterion, max_difference=max_diff)
    if not report.agree:
        log.warning(f"PARAM: collapsibility criterion ({report.criterion}) disagrees with the direct "
                    f"comparison ({report.collapsible}) for {scheme.label(effect)} in "
                    f"{scheme.label(M)} vs {scheme.label(N)}")
    return report


def collapsibility_check(table: Table, effect: Effect, M: Effect, N: Effect) -> bool:
    """True iff the parameters of ``effect`` (and its sub-effects) agree in ``M`` and ``N``."""
    return collapsibility_report(table, effect, M, N).collapsible
