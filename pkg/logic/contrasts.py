# Filename: logic/contrasts.py
"""
Log-linear parameters of a single marginal and the contrast blocks behind B.

Every coding is built from one factor pair per marginal variable:

* a lumping matrix ``L_j`` (``None`` for "no lumping") that sums categories
  into the lumps the odds ratio needs, and
* a contrast matrix ``D_j`` applied to the logarithm of the lumped table.

A block's lump matrix and its B-columns are the Kronecker products of these
factors in scheme order, which is the documented cell order. Local coding is
effect coding (``L_j = I``); spanning coding compares with the first category;
global and continuation coding lump categories first.
"""

import logging
from functools import reduce
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from config import settings
from core.exceptions import PositivityError, SchemeError
from core.scheme import Effect, VariableScheme
from core.sequence import effect_dimension
from core.table import Table, marginal_array

log = logging.getLogger(__name__)

CodingKind = Literal["local", "spanning", "global", "continuation"]
CODINGS: Tuple[str, ...] = ("local", "spanning", "global", "continuation")

# one (lumping, contrast) pair per marginal variable
Factor = Tuple[Optional[np.ndarray], np.ndarray]


# ------------------------------------------------------------------------------
# Per-variable factors
# ------------------------------------------------------------------------------
def _indicator(c: int, levels: Iterable[int]) -> np.ndarray:
    v = np.zeros(c)
    v[list(levels)] = 1.0
    return v


def _effect_factor(c: int) -> np.ndarray:
    """Columns indicator(e) - 1/c for e = 2..c."""
    return np.eye(c)[:, 1:] - 1.0 / c


def _corner_lumps(c: int, corner_sets) -> np.ndarray:
    """Lumping matrix with columns (e=2,s=0), (e=2,s=1), (e=3,s=0), ..."""
    cols = []
    for e in range(1, c):
        low, high = corner_sets(e)
        cols.append(_indicator(c, low))
        cols.append(_indicator(c, high))
    return np.column_stack(cols)


def _corner_contrast(c: int, scale: float) -> np.ndarray:
    """Pairs the two corners of every category: +scale on s=1, -scale on s=0."""
    d = np.zeros((2 * (c - 1), c - 1))
    for k in range(c - 1):
        d[2 * k, k] = -scale
        d[2 * k + 1, k] = scale
    return d


def variable_factor(c: int, in_effect: bool, coding: str, is_response: bool) -> Factor:
    """
    Factor pair for one marginal variable with ``c`` levels.

    Variables outside the effect are averaged over (``1/c``), which averages
    the log odds ratios over the conditioning categories.
    """
    if not in_effect:
        return None, np.full((c, 1), 1.0 / c)
    if coding == "local":
        return None, _effect_factor(c)
    if coding == "spanning":
        d = np.zeros((c, c - 1))
        d[0, :] = -0.5
        d[1:, :] += 0.5 * np.eye(c - 1)
        return None, d
    if coding == "global":
        return _corner_lumps(c, lambda e: (range(0, e), range(e, c))), _corner_contrast(c, 0.5)
    if coding == "continuation":
        if is_response:
            return _corner_lumps(c, lambda e: ([e - 1], range(e, c))), _corner_contrast(c, 0.5)
        d = np.zeros((c, c - 1))
        for k in range(c - 1):
            d[k, k] = -0.5
            d[k + 1, k] = 0.5
        return None, d
    raise ValueError(f"unknown coding '{coding}' (expected one of {CODINGS})")


# ------------------------------------------------------------------------------
# Axis-wise contraction helpers
# ------------------------------------------------------------------------------
def contract(arr: np.ndarray, mats: Sequence[Optional[np.ndarray]]) -> np.ndarray:
    """Apply ``mats[k].T`` along axis ``k`` (``None`` leaves the axis alone)."""
    out = arr
    for axis, mat in enumerate(mats):
        if mat is None:
            continue
        out = np.moveaxis(np.tensordot(out, mat, axes=([axis], [0])), -1, axis)
    return out


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.ones((1, 1)))


# ------------------------------------------------------------------------------
# ContrastBlock
# ------------------------------------------------------------------------------
class ContrastBlock(BaseModel):
    """
    Contrasts of one effect inside one marginal.

    ``columns()`` has one column per non-redundant component (every effect
    variable away from its first category, last variable fastest) and one row
    per lumped cell; ``lumps()`` maps marginal cells to lumped cells and is
    ``None`` when no lumping takes place.

    :ivar scheme: Full variable scheme
    :ivar marginal: Marginal the effect is computed in
    :ivar effect: The effect
    :ivar coding: Odds-ratio coding
    :ivar response: Response variables for continuation coding
    """
    model_config = ConfigDict(frozen=True)

    scheme: VariableScheme
    marginal: Effect
    effect: Effect
    coding: CodingKind = "local"
    response: Effect = Effect(mask=0)

    @model_validator(mode="after")
    def _check_nesting(self) -> "ContrastBlock":
        self.scheme.check(self.marginal)
        if not self.effect.issubset(self.marginal):
            raise SchemeError(
                f"effect {self.scheme.label(self.effect)} is not inside marginal {self.scheme.label(self.marginal)}")
        return self

    @property
    def dimension(self) -> int:
        return effect_dimension(self.effect, self.scheme)

    @property
    def marginal_shape(self) -> Tuple[int, ...]:
        return self.scheme.shape_of(self.marginal)

    def factors(self) -> List[Factor]:
        response = self.response if not self.response.is_empty else _default_response(self.effect)
        out = []
        for p in self.marginal.positions():
            c = self.scheme.variables[p].levels
            in_effect = bool((self.effect.mask >> p) & 1)
            is_response = bool((response.mask >> p) & 1)
            out.append(variable_factor(c, in_effect, self.coding, is_response))
        return out

    @property
    def linear(self) -> bool:
        """True when the components are linear in the log marginal probabilities."""
        return all(lump is None for lump, _ in self.factors())

    def lumps(self) -> Optional[np.ndarray]:
        factors = self.factors()
        if all(lump is None for lump, _ in factors):
            return None
        return kron_all([np.eye(len(d)) if lump is None else lump
                         for (lump, d) in factors])

    def columns(self, index: Optional[Sequence[int]] = None) -> np.ndarray:
        """Dense B-block, optionally only the listed component columns."""
        mats = [d for _, d in self.factors()]
        if index is None:
            return kron_all(mats)
        widths = [m.shape[1] for m in mats]
        cols = []
        for k in index:
            digits = np.unravel_index(int(k), widths)
            cols.append(kron_all([m[:, [d]] for m, d in zip(mats, digits)]).ravel())
        return np.column_stack(cols) if cols else np.zeros((int(np.prod([m.shape[0] for m in mats])), 0))

    def lumped(self, marginal_probs: np.ndarray) -> np.ndarray:
        """Lumped (or plain) marginal table, checked for positivity."""
        q = contract(marginal_probs, [lump for lump, _ in self.factors()])
        if np.any(q < settings.POSITIVITY_FLOOR):
            raise PositivityError(
                f"zero (lumped) cell in marginal {self.scheme.label(self.marginal)} "
                f"for effect {self.scheme.label(self.effect)}")
        return q

    def evaluate(self, marginal_probs: np.ndarray) -> np.ndarray:
        """Component values from the marginal table (shaped like the marginal)."""
        q = self.lumped(marginal_probs)
        return contract(np.log(q), [d for _, d in self.factors()]).reshape(-1)

    def gradient(self, marginal_probs: np.ndarray, index: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        Derivative of the components with respect to the marginal cells,
        returned as (marginal cells x components).
        """
        q = self.lumped(marginal_probs).reshape(-1)
        cols = self.columns(index) / q[:, None]
        lumps = self.lumps()
        return cols if lumps is None else lumps @ cols


def _default_response(effect: Effect) -> Effect:
    positions = effect.positions()
    return Effect.from_positions(positions[-1:]) if positions else effect


def contrast_matrix(scheme: VariableScheme, marginal: Effect, effect: Effect,
                    coding: str = "local", response: Optional[Effect] = None) -> ContrastBlock:
    """
    Contrast block for ``effect`` computed in ``marginal``.

    For local coding ``B' log p_M`` reproduces :func:`loglinear_recursion`
    on the marginal table at the non-redundant categories. The other codings
    use 2^-|effect| times the conditioning average of the log generalized
    odds ratios, so all four agree on binary variables.
    """
    return ContrastBlock(scheme=scheme, marginal=marginal, effect=effect, coding=coding,
                         response=response if response is not None else Effect.empty())


# ------------------------------------------------------------------------------
# Log-linear recursion on one table
# ------------------------------------------------------------------------------
def loglinear_recursion(table: Table, effect: Effect) -> np.ndarray:
    """
    Full (redundant) log-linear parameter array of ``effect`` in ``table``.

    ``lambda_empty`` is the mean of ``log P``; for larger effects, the mean of
    ``log P`` over the cells matching the category combination minus the
    parameters of all proper sub-effects at the restricted index.

    :return: Array with one axis per effect variable (scheme order)
    :raises PositivityError: on a zero cell
    """
    p = table.normalized().cells
    if np.any(p < settings.POSITIVITY_FLOOR):
        raise PositivityError("log-linear parameters need a strictly positive table")
    scheme = table.scheme
    table.scheme.check(effect)
    logp = np.log(p)
    cache = {}

    def lam(sub: Effect) -> np.ndarray:
        if sub in cache:
            return cache[sub]
        drop = tuple(a for a in range(scheme.n_vars) if not (sub.mask >> a) & 1)
        value = logp.mean(axis=drop, keepdims=True) if drop else logp.copy()
        for smaller in sub.subsets():
            if smaller != sub:
                value = value - lam(smaller)
        cache[sub] = value
        return value

    full = lam(effect)
    squeeze = tuple(a for a in range(scheme.n_vars) if not (effect.mask >> a) & 1)
    return full.squeeze(axis=squeeze) if squeeze else full


def nonredundant(values: np.ndarray) -> np.ndarray:
    """Drop every category combination with an effect variable at its first level."""
    return values[tuple(slice(1, None) for _ in range(values.ndim))].reshape(-1)


# ------------------------------------------------------------------------------
# Generalized odds ratios
# ------------------------------------------------------------------------------
def _odds_ratio_factor(c: int, in_effect: bool, coding: str, is_response: bool) -> Factor:
    if not in_effect:
        return None, np.eye(c)
    if coding == "local":
        lumps = _corner_lumps(c, lambda e: ([e - 1], [e]))
    elif coding == "spanning":
        lumps = _corner_lumps(c, lambda e: ([0], [e]))
    elif coding == "global":
        lumps = _corner_lumps(c, lambda e: (range(0, e), range(e, c)))
    elif coding == "continuation":
        if is_response:
            lumps = _corner_lumps(c, lambda e: ([e - 1], range(e, c)))
        else:
            lumps = _corner_lumps(c, lambda e: ([e - 1], [e]))
    else:
        raise ValueError(f"unknown coding '{coding}' (expected one of {CODINGS})")
    return lumps, _corner_contrast(c, 1.0)


def odds_ratios(table: Table, marginal: Effect, effect: Effect, coding: str = "local",
                response: Optional[Effect] = None) -> np.ndarray:
    """
    Generalized odds ratios of ``effect`` within the ``marginal`` table.

    The result has one axis per marginal variable: ``c_j - 1`` entries for
    effect variables (categories 2..c) and ``c_j`` entries for conditioning
    variables, so each conditioning combination is one slice. For local
    coding these are adjacent-category odds ratios.

    :raises PositivityError: on a zero (lumped) cell
    """
    scheme = table.scheme
    if not effect.issubset(marginal):
        raise SchemeError("effect must be contained in the marginal")
    probs = marginal_array(table.normalized().cells, scheme, marginal)
    response = response if response is not None and not response.is_empty else _default_response(effect)
    factors = []
    for p in marginal.positions():
        factors.append(_odds_ratio_factor(scheme.variables[p].levels,
                                          bool((effect.mask >> p) & 1), coding,
                                          bool((response.mask >> p) & 1)))
    q = contract(probs, [lump for lump, _ in factors])
    if np.any(q < settings.POSITIVITY_FLOOR):
        raise PositivityError(f"zero lumped probability for {coding} odds ratios")
    return np.exp(contract(np.log(q), [d for _, d in factors]))
