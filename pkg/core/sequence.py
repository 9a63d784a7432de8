# Filename: core/sequence.py
"""
Marginal sequences and the combinatorial checks run on them.

- ``MarginalSequence``: non-decreasing list of marginals ending in the full set
- ``assign_effects``: every effect goes to the first marginal containing it
- ``is_ordered_decomposable``: prefix-wise running-intersection test, which is
  equivalent to variation independence of the parameter components
"""

import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import SequenceError
from .scheme import Effect, VariableScheme

log = logging.getLogger(__name__)


def effect_dimension(effect: Effect, scheme: VariableScheme) -> int:
    """Number of non-redundant components: product of (levels - 1); 1 for the empty effect."""
    scheme.check(effect)
    return math.prod(c - 1 for c in scheme.shape_of(effect))


# ------------------------------------------------------------------------------
# Non-decreasing sequence of marginals
# ------------------------------------------------------------------------------
class MarginalSequence(BaseModel):
    """
    Ordered marginals ``M_1 ... M_k`` with no later marginal contained in an
    earlier one and ``M_k`` equal to the full variable set.

    :ivar scheme: Variable scheme the marginals refer to
    :ivar marginals: The marginals in order
    """
    model_config = ConfigDict(frozen=True)

    scheme: VariableScheme
    marginals: Tuple[Effect, ...]

    @model_validator(mode="after")
    def _check_order(self) -> "MarginalSequence":
        check_non_decreasing(self.scheme, self.marginals)
        return self

    @classmethod
    def create(cls, scheme: VariableScheme,
               marginals: Iterable[Union[Effect, str, Iterable[str]]]) -> "MarginalSequence":
        """
        Build from effects or name lists.

        :raises SequenceError: if the order is not non-decreasing or the last marginal is not the full set
        """
        effects = tuple(scheme.effect(m) for m in marginals)
        try:
            return cls(scheme=scheme, marginals=effects)
        except ValidationError as e:
            raise SequenceError(str(e.errors()[0].get("msg", e))) from e

    @classmethod
    def saturated(cls, scheme: VariableScheme) -> "MarginalSequence":
        return cls(scheme=scheme, marginals=(scheme.full,))

    def __len__(self) -> int:
        return len(self.marginals)

    def labels(self) -> List[str]:
        return [self.scheme.label(m) for m in self.marginals]


def check_non_decreasing(scheme: VariableScheme, marginals: Sequence[Effect]) -> None:
    if not marginals:
        raise SequenceError("a marginal sequence needs at least one marginal")
    for i, m in enumerate(marginals):
        scheme.check(m)
        if m.is_empty:
            raise SequenceError(f"marginal {i + 1} is empty")
        for j in range(i):
            if m.issubset(marginals[j]):
                raise SequenceError(
                    f"not non-decreasing: marginal {i + 1} ({scheme.label(m)}) is contained in "
                    f"marginal {j + 1} ({scheme.label(marginals[j])})")
    if marginals[-1] != scheme.full:
        raise SequenceError(
            f"last marginal {scheme.label(marginals[-1])} is not the full set {scheme.label(scheme.full)}")


# ------------------------------------------------------------------------------
# Effect -> marginal assignment
# ------------------------------------------------------------------------------
def assign_effects(seq: MarginalSequence) -> Dict[Effect, int]:
    """
    Map every effect to the index (0-based) of the first marginal containing it.
    """
    out: Dict[Effect, int] = {}
    for i, marginal in enumerate(seq.marginals):
        for sub in marginal.subsets():
            if sub not in out:
                out[sub] = i
    return out


def first_containing(marginals: Sequence[Effect], effect: Effect) -> Optional[int]:
    for i, m in enumerate(marginals):
        if effect.issubset(m):
            return i
    return None


# ------------------------------------------------------------------------------
# Ordered decomposability
# ------------------------------------------------------------------------------
class PrefixCheck(BaseModel):
    """
    Result for one prefix ``M_1 ... M_j``.

    :ivar length: Prefix length j (1-based)
    :ivar maximal: Maximal marginals of the prefix, in sequence order
    :ivar ordering: A running-intersection ordering if one exists, else the longest partial one
    :ivar ok: Whether the running-intersection ordering exists
    """
    length: int
    maximal: List[Effect]
    ordering: List[Effect]
    ok: bool


class DecomposabilityReport(BaseModel):
    """
    Verdict of :func:`is_ordered_decomposable`.

    :ivar decomposable: True iff ordered decomposable
    :ivar failing_prefix: Length of the first failing prefix, if any
    :ivar prefixes: Every prefix tested (lengths 3..k)
    """
    decomposable: bool
    failing_prefix: Optional[int] = None
    prefixes: List[PrefixCheck] = Field(default_factory=list)

    @property
    def witness(self) -> Optional[PrefixCheck]:
        for p in self.prefixes:
            if not p.ok:
                return p
        return None


def maximal_elements(sets: Sequence[Effect]) -> List[Effect]:
    """Sets not strictly contained in another one; order of first appearance is kept."""
    out: List[Effect] = []
    for s in sets:
        if s in out:
            continue
        if any(s != t and s.issubset(t) for t in sets):
            continue
        out.append(s)
    return out


def running_intersection_order(sets: Sequence[Effect]) -> Tuple[bool, List[int]]:
    """
    Search for an ordering ``H_1 ... H_l`` in which every ``H_h`` meets the union
    of its predecessors inside a single predecessor.

    Depth-first over chosen subsets, memoising dead ends by bitmask, so the
    cost is at most ``2^l`` states rather than ``l!`` orderings.

    :return: (found, ordering) where ordering is complete when found, else the longest partial one
    """
    n = len(sets)
    if n <= 2:
        return True, list(range(n))
    dead = set()
    best: List[int] = []

    def extend(chosen_mask: int, union: int, order: List[int]) -> Optional[List[int]]:
        nonlocal best
        if len(order) > len(best):
            best = list(order)
        if len(order) == n:
            return order
        if chosen_mask in dead:
            return None
        for h in range(n):
            if (chosen_mask >> h) & 1:
                continue
            meet = union & sets[h].mask
            if order and not any(meet & ~sets[g].mask == 0 for g in order):
                continue
            found = extend(chosen_mask | (1 << h), union | sets[h].mask, order + [h])
            if found is not None:
                return found
        dead.add(chosen_mask)
        return None

    result = extend(0, 0, [])
    if result is None:
        return False, best
    return True, result


def is_ordered_decomposable(seq: MarginalSequence) -> DecomposabilityReport:
    """
    Test ordered decomposability of a non-decreasing sequence.

    True if ``k <= 2``; otherwise for every prefix length ``j = 3 .. k`` the
    maximal marginals of the prefix must admit a running-intersection ordering.
    Returns the first failing prefix and its maximal elements as evidence.
    """
    k = len(seq.marginals)
    report = DecomposabilityReport(decomposable=True)
    if k <= 2:
        return report
    for j in range(3, k + 1):
        maximal = maximal_elements(seq.marginals[:j])
        ok, order = running_intersection_order(maximal)
        report.prefixes.append(PrefixCheck(
            length=j, maximal=maximal, ordering=[maximal[i] for i in order], ok=ok))
        if not ok:
            report.decomposable = False
            report.failing_prefix = j
            log.info(f"TABLE: sequence {seq.labels()} fails ordered decomposability at prefix {j}")
            break
    return report
