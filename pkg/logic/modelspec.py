# Filename: logic/modelspec.py
"""
Marginal log-linear models as linear restrictions on the parameter vector.

A model is stored in constraint form ``C' lambda = 0`` together with its
freedom form ``lambda = X beta`` (``X`` spans the orthogonal complement of
``C``). Zero-effect models keep both matrices as sparse selections; general
linear models get ``X`` from a pivoted QR factorization.

Conditional-independence lists compile into zero effects through their
D-sets: the effects inside ``A u B u C`` that meet both ``A`` and ``B``.
"""

import logging
from itertools import combinations, permutations
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import sparse

from config import settings
from core.exceptions import CompilationError, SchemeError
from core.scheme import Effect, VariableScheme
from core.sequence import MarginalSequence, first_containing
from .contrasts import CodingKind
from .parameterization import MLLParameterization, build

log = logging.getLogger(__name__)

Provenance = Literal["manual", "CI", "DAG", "chain", "path", "equality", "linear"]
EffectLike = Union[Effect, str, Iterable[str]]


# ------------------------------------------------------------------------------
# Conditional independence statements
# ------------------------------------------------------------------------------
class CIStatement(BaseModel):
    """
    ``A`` independent of ``B`` given ``C``.

    :ivar A: First independent side (nonempty)
    :ivar B: Second independent side (nonempty)
    :ivar C: Conditioning set (may be empty)
    """
    model_config = ConfigDict(frozen=True)

    A: Effect
    B: Effect
    C: Effect = Effect(mask=0)

    @model_validator(mode="after")
    def _check_sets(self) -> "CIStatement":
        if self.A.is_empty or self.B.is_empty:
            raise ValueError("both independent sides must be nonempty")
        if not (self.A.isdisjoint(self.B) and self.A.isdisjoint(self.C) and self.B.isdisjoint(self.C)):
            raise ValueError("A, B and C must be pairwise disjoint")
        return self

    @classmethod
    def of(cls, scheme: VariableScheme, a: EffectLike, b: EffectLike, given: EffectLike = ()) -> "CIStatement":
        return cls(A=scheme.effect(a), B=scheme.effect(b), C=scheme.effect(given))

    @property
    def union(self) -> Effect:
        return self.A | self.B | self.C

    def label(self, scheme: VariableScheme) -> str:
        text = f"{scheme.label(self.A)} _||_ {scheme.label(self.B)}"
        return text if self.C.is_empty else f"{text} | {scheme.label(self.C)}"


def d_set(ci: CIStatement) -> List[Effect]:
    """Subsets of ``A u B u C`` meeting both ``A`` and ``B``, smallest first."""
    return sorted(e for e in ci.union.subsets()
                  if not e.isdisjoint(ci.A) and not e.isdisjoint(ci.B))


# ------------------------------------------------------------------------------
# The model
# ------------------------------------------------------------------------------
class ZeroedEffect(BaseModel):
    """
    :ivar marginal: Marginal the effect is housed in
    :ivar effect: The zeroed effect
    :ivar dimension: Number of components set to zero
    """
    model_config = ConfigDict(frozen=True)

    marginal: Effect
    effect: Effect
    dimension: int


class ModelSpec(BaseModel):
    """
    Linear model on the components of a parameterization.

    :ivar param: Parameterization the model restricts
    :ivar C: Constraint matrix (components x constraints)
    :ivar X: Freedom design (components x free parameters)
    :ivar zeroed_effects: Effects set to zero, with their marginals
    :ivar provenance: Where the model came from
    :ivar cis: Independence statements the model was compiled from
    :ivar df: Column rank of ``C``
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    param: MLLParameterization
    C: sparse.csr_matrix
    X: sparse.csr_matrix
    zeroed_effects: Tuple[ZeroedEffect, ...] = ()
    provenance: Provenance = "manual"
    cis: Tuple[CIStatement, ...] = ()
    df: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelSpec":
        n = self.param.n_components
        if self.C.shape[0] != n or self.X.shape[0] != n:
            raise ValueError(f"C and X need {n} rows (one per component)")
        if self.C.shape[1] + self.X.shape[1] != n:
            raise ValueError("C and X together must have one column per component")
        return self

    @property
    def scheme(self) -> VariableScheme:
        return self.param.scheme

    @property
    def n_free(self) -> int:
        return self.X.shape[1]

    @property
    def is_zero_effect_model(self) -> bool:
        return self.provenance in ("manual", "CI", "DAG", "chain", "path") and is_selection(self.C)

    def constrained_components(self) -> List[str]:
        """Labels of components a zero-effect model sets to zero."""
        rows = np.unique(self.C.nonzero()[0])
        labels = self.param.labels
        return [labels[r] for r in rows]

    def check_forms(self) -> Tuple[float, bool]:
        """(max |C'X|, whether (X, C) is square and of full rank)."""
        residual = float(abs(self.C.T @ self.X).max()) if self.C.shape[1] and self.X.shape[1] else 0.0
        stacked = sparse.hstack([self.X, self.C]).toarray()
        full = stacked.shape[0] == stacked.shape[1] and np.linalg.matrix_rank(stacked) == stacked.shape[0]
        return residual, bool(full)

    def effect_labels(self) -> List[str]:
        return [f"{self.scheme.label(z.effect)}@{self.scheme.label(z.marginal)}" for z in self.zeroed_effects]


def is_selection(C: sparse.csr_matrix) -> bool:
    C = sparse.csc_matrix(C)
    if C.nnz != C.shape[1] or np.any(np.diff(C.indptr) != 1):
        return False
    return bool(np.all(C.data == 1.0)) and np.unique(C.indices).size == C.shape[1]


def _rank(C: sparse.csr_matrix) -> int:
    if C.shape[1] == 0:
        return 0
    if is_selection(C):
        return C.shape[1]
    return int(np.linalg.matrix_rank(C.toarray()))


def _selection(n: int, rows: Sequence[int]) -> sparse.csr_matrix:
    rows = np.asarray(rows, dtype=int)
    return sparse.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))), shape=(n, rows.size))


# ------------------------------------------------------------------------------
# Orthogonal complements
# ------------------------------------------------------------------------------
def complement_basis(A: np.ndarray, require_full_rank: bool) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the column span of ``A``."""
    A = np.asarray(A, dtype=float)
    n, k = A.shape
    if k == 0:
        return np.eye(n)
    Q, R, _ = scipy.linalg.qr(A, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if require_full_rank and rank < k:
        raise SchemeError(f"matrix has rank {rank} < {k} columns; its complement is not well defined")
    return Q[:, rank:]


def orthogonal_complement(Xmat) -> np.ndarray:
    """
    ``C`` with ``C'X = 0`` and ``(X, C)`` invertible.

    :raises SchemeError: if ``X`` is rank deficient
    """
    X = Xmat.toarray() if sparse.issparse(Xmat) else np.asarray(Xmat, dtype=float)
    return complement_basis(X, require_full_rank=True)


# ------------------------------------------------------------------------------
# Model constructors
# ------------------------------------------------------------------------------
def _resolve_effect(param: MLLParameterization, item) -> Tuple[Effect, Effect]:
    """(marginal, effect) for an effect or a (marginal, effect) pair."""
    scheme = param.scheme
    if isinstance(item, ZeroedEffect):
        item = (item.marginal, item.effect)
    if isinstance(item, tuple) and len(item) == 2 and all(isinstance(x, (Effect, list, tuple)) for x in item):
        marginal, effect = scheme.effect(item[0]), scheme.effect(item[1])
        housed = param.housed_in(effect)
        if housed != marginal:
            raise SchemeError(f"effect {scheme.label(effect)} is housed in {scheme.label(housed)}, "
                              f"not in {scheme.label(marginal)}")
        return marginal, effect
    effect = scheme.effect(item)
    return param.housed_in(effect), effect


def zero_effect_model(param: MLLParameterization, effects: Iterable, provenance: Provenance = "manual",
                      cis: Sequence[CIStatement] = ()) -> ModelSpec:
    """
    Set every component of the listed effects to zero.

    Effects may be given as :class:`Effect`, names, or (marginal, effect)
    pairs; duplicates are ignored. Components stay in parameter order.

    :raises SchemeError: if an effect is not a component of ``param``
    """
    chosen: Dict[Effect, Effect] = {}
    for item in effects:
        marginal, effect = _resolve_effect(param, item)
        if effect.is_empty:
            raise SchemeError("the empty effect cannot be set to zero")
        chosen[effect] = marginal
    blocks = sorted(param.block_of(e) for e in chosen)
    rows: List[int] = []
    zeroed = []
    for k in blocks:
        block = param.blocks[k]
        sl = param.block_slice(k)
        rows.extend(range(sl.start, sl.stop))
        zeroed.append(ZeroedEffect(marginal=block.marginal, effect=block.effect, dimension=block.dimension))
    n = param.n_components
    free = np.setdiff1d(np.arange(n), rows)
    spec = ModelSpec(param=param, C=_selection(n, rows), X=_selection(n, free), zeroed_effects=tuple(zeroed),
                     provenance=provenance, cis=tuple(cis), df=len(rows))
    log.info(f"COMPILE: {provenance} model with {len(zeroed)} zeroed effects, df={spec.df}")
    return spec


def linear_model(param: MLLParameterization, C=None, X=None, provenance: Provenance = "linear") -> ModelSpec:
    """
    Model from either form; the other one is the orthogonal complement.

    A rank-deficient ``C`` is accepted (df is its rank); ``X`` must have full column rank.
    """
    n = param.n_components
    if (C is None) == (X is None):
        raise SchemeError("give exactly one of C (constraint form) or X (freedom form)")
    if X is not None:
        Xd = X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=float).reshape(n, -1)
        Cd = orthogonal_complement(Xd)
    else:
        Cd = C.toarray() if sparse.issparse(C) else np.asarray(C, dtype=float).reshape(n, -1)
        Xd = complement_basis(Cd, require_full_rank=False)
        # keep only independent constraint directions so (X, C) stays square
        Cd = complement_basis(Xd, require_full_rank=True) if Cd.shape[1] else Cd
    Cs = sparse.csr_matrix(Cd)
    return ModelSpec(param=param, C=Cs, X=sparse.csr_matrix(Xd), provenance=provenance, df=_rank(Cs))


def equality_model(param: MLLParameterization, pairs: Iterable, base: Optional[ModelSpec] = None) -> ModelSpec:
    """
    Equality constraints ``lambda_a - lambda_b = 0``.

    Each pair is two component labels, or two effects (names or
    :class:`Effect`) of equal dimension whose components are equated
    position by position. With ``base`` the constraints are added to an
    existing model on the same parameterization.
    """
    n = param.n_components
    columns: List[np.ndarray] = []
    for left, right in pairs:
        for a, b in _pair_indices(param, left, right):
            col = np.zeros(n)
            col[a] += 1.0
            col[b] -= 1.0
            columns.append(col)
    C = np.column_stack(columns) if columns else np.zeros((n, 0))
    zeroed: Tuple[ZeroedEffect, ...] = ()
    cis: Tuple[CIStatement, ...] = ()
    if base is not None:
        if base.param is not param:
            raise SchemeError("base model uses a different parameterization")
        C = np.hstack([base.C.toarray(), C])
        zeroed, cis = base.zeroed_effects, base.cis
    spec = linear_model(param, C=C, provenance="equality")
    spec = spec.model_copy(update={"zeroed_effects": zeroed, "cis": cis})
    log.info(f"COMPILE: equality model with {len(columns)} equated pairs, df={spec.df}")
    return spec


def _pair_indices(param: MLLParameterization, left, right) -> List[Tuple[int, int]]:
    if isinstance(left, str) and isinstance(right, str) and "|" in left and "|" in right:
        return [(param.index_of(left), param.index_of(right))]
    sa = param.effect_slice(param.scheme.effect(left))
    sb = param.effect_slice(param.scheme.effect(right))
    if sa.stop - sa.start != sb.stop - sb.start:
        raise SchemeError("equated effects must have the same dimension")
    return list(zip(range(sa.start, sa.stop), range(sb.start, sb.stop)))


# ------------------------------------------------------------------------------
# Independence lists
# ------------------------------------------------------------------------------
def _violations(scheme: VariableScheme, cis: Sequence[CIStatement],
                marginals: Sequence[Effect]) -> List[Dict[str, Any]]:
    """Every (effect, housing marginal, statement) breaking ``C_i <= M(E) <= A_i u B_i u C_i``."""
    out = []
    for i, ci in enumerate(cis):
        for effect in d_set(ci):
            idx = first_containing(marginals, effect)
            marginal = marginals[idx]
            if not (ci.C.issubset(marginal) and marginal.issubset(ci.union)):
                out.append({"effect": scheme.label(effect), "marginal": scheme.label(marginal),
                            "position": idx, "statement": i, "independence": ci.label(scheme)})
    return out


def necessary_condition(scheme: VariableScheme, cis: Sequence[CIStatement]) -> List[Dict[str, Any]]:
    """
    Effects shared by several D-sets whose interval ``u C_i <= M <= n (A_i u B_i u C_i)``
    is empty; any such effect rules out every marginal sequence.
    """
    lower: Dict[Effect, Effect] = {}
    upper: Dict[Effect, Effect] = {}
    owners: Dict[Effect, List[int]] = {}
    for i, ci in enumerate(cis):
        for effect in d_set(ci):
            lower[effect] = lower.get(effect, Effect.empty()) | ci.C
            upper[effect] = (upper[effect] & ci.union) if effect in upper else ci.union
            owners.setdefault(effect, []).append(i)
    out = []
    for effect in sorted(lower):
        if not lower[effect].issubset(upper[effect]):
            out.append({"effect": scheme.label(effect), "lower": scheme.label(lower[effect]),
                        "upper": scheme.label(upper[effect]), "statements": owners[effect]})
    return out


def _check_scheme(scheme: VariableScheme, cis: Sequence[CIStatement]) -> None:
    for ci in cis:
        scheme.check(ci.union)


def suggest_sequence(scheme: VariableScheme, cis: Sequence[CIStatement]) -> MarginalSequence:
    """
    Find a marginal sequence over which the independences are zero effects.

    Candidates are the distinct ``A u B u C`` sets; subsets of them are tried
    from largest to smallest in every non-decreasing order (exhaustive up
    to ``SEQUENCE_SEARCH_LIMIT`` candidates, greedy repair beyond), always
    closed by the full variable set.

    :raises CompilationError: if no candidate sequence works
    """
    _check_scheme(scheme, cis)
    failed = necessary_condition(scheme, cis)
    if failed:
        raise CompilationError("an appropriate sequence of marginals does not exist "
                               f"({len(failed)} effects with an empty marginal interval)",
                               witnesses=failed, necessary_condition_failed=True)
    full = scheme.full
    candidates: List[Effect] = []
    for ci in cis:
        if ci.union != full and ci.union not in candidates:
            candidates.append(ci.union)
    candidates.sort()

    if len(candidates) <= settings.SEQUENCE_SEARCH_LIMIT:
        found = _exhaustive_search(scheme, cis, candidates)
    else:
        found = _greedy_search(scheme, cis, candidates)
    if found is None:
        witnesses = _violations(scheme, cis, sorted(candidates) + [full])
        raise CompilationError("no admissible ordering of the candidate marginals exists",
                               witnesses=witnesses)
    log.info(f"COMPILE: suggested sequence {[scheme.label(m) for m in found]}")
    return MarginalSequence(scheme=scheme, marginals=tuple(found))


def _non_decreasing(marginals: Sequence[Effect]) -> bool:
    return all(not marginals[j].issubset(marginals[i]) for j in range(len(marginals)) for i in range(j))


def _exhaustive_search(scheme, cis, candidates) -> Optional[List[Effect]]:
    full = scheme.full
    for size in range(len(candidates), -1, -1):
        for subset in combinations(candidates, size):
            # size order first, so the natural ordering is tried before the rest
            for order in permutations(sorted(subset)):
                marginals = list(order) + [full]
                if _non_decreasing(marginals) and not _violations(scheme, cis, marginals):
                    return marginals
    return None


def _greedy_search(scheme, cis, candidates) -> Optional[List[Effect]]:
    full = scheme.full
    order = sorted(candidates)
    for _ in range(len(order) ** 2):
        marginals = order + [full]
        bad = _violations(scheme, cis, marginals)
        if not bad:
            return marginals
        ci = cis[bad[0]["statement"]]
        if ci.union not in order:
            return None
        target = order.index(ci.union)
        housing = bad[0]["position"]
        if target < housing:
            return None
        moved = order[:housing] + [order[target]] + [m for i, m in enumerate(order[housing:], housing) if i != target]
        if not _non_decreasing(moved + [full]) or moved == order:
            return None
        order = moved
    return None


def compile_ci(cis: Sequence[CIStatement], seq: Optional[MarginalSequence] = None,
               param: Optional[MLLParameterization] = None, scheme: Optional[VariableScheme] = None,
               coding: CodingKind = "local", provenance: Provenance = "CI") -> ModelSpec:
    """
    Zero-effect model for a list of conditional independences.

    Every effect of every D-set is zeroed in the marginal it is housed in,
    which is valid when each housing marginal lies between ``C_i`` and
    ``A_i u B_i u C_i``. Without ``seq`` or ``param`` a sequence is searched
    for with :func:`suggest_sequence`.

    :raises CompilationError: with one witness per failing (effect, marginal, statement)
    """
    if param is not None:
        seq = param.sequence
    if seq is not None:
        scheme = seq.scheme
    if scheme is None:
        raise SchemeError("compile_ci needs a scheme, a sequence or a parameterization")
    cis = list(cis)
    _check_scheme(scheme, cis)

    failed = necessary_condition(scheme, cis)
    if failed:
        for w in failed:
            log.error(f"COMPILE: effect {w['effect']} needs {w['lower']} <= M <= {w['upper']}")
        raise CompilationError("an appropriate sequence of marginals does not exist",
                               witnesses=failed, necessary_condition_failed=True)
    if seq is None:
        seq = suggest_sequence(scheme, cis) if cis else MarginalSequence.saturated(scheme)

    bad = _violations(scheme, cis, seq.marginals)
    if bad:
        for w in bad:
            log.error(f"COMPILE: effect {w['effect']} housed in {w['marginal']} breaks statement "
                      f"{w['statement'] + 1} ({w['independence']})")
        raise CompilationError(f"{len(bad)} effects are housed in marginals outside their independence "
                               f"interval over {seq.labels()}", witnesses=bad)

    if param is None:
        param = build(scheme, seq, coding)
    effects = set()
    for ci in cis:
        effects.update(d_set(ci))
    return zero_effect_model(param, effects, provenance=provenance, cis=cis)
