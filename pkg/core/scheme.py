# Filename: core/scheme.py
"""
Variable schemes and effects.

An :class:`Effect` is a subset of the scheme variables stored as a bitmask
over scheme positions (bit ``i`` set <=> variable ``i`` is a member). All
subset tests in the project go through these masks, so power-set scans stay
cheap up to about twenty variables.
"""

import logging
import math
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import SchemeError

log = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
# Effect: subset of variables as a bitmask
# ------------------------------------------------------------------------------
class Effect(BaseModel):
    """
    A (possibly empty) set of variables, identified by scheme positions.

    :ivar mask: Bitmask over scheme positions
    """
    model_config = ConfigDict(frozen=True)

    mask: int = Field(ge=0)

    @classmethod
    def from_positions(cls, positions: Iterable[int]) -> "Effect":
        mask = 0
        for p in positions:
            mask |= 1 << int(p)
        return cls(mask=mask)

    @classmethod
    def empty(cls) -> "Effect":
        return cls(mask=0)

    def positions(self) -> Tuple[int, ...]:
        out = []
        m, i = self.mask, 0
        while m:
            if m & 1:
                out.append(i)
            m >>= 1
            i += 1
        return tuple(out)

    def issubset(self, other: "Effect") -> bool:
        return self.mask & ~other.mask == 0

    def issuperset(self, other: "Effect") -> bool:
        return other.issubset(self)

    def isdisjoint(self, other: "Effect") -> bool:
        return self.mask & other.mask == 0

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    def __or__(self, other: "Effect") -> "Effect":
        return Effect(mask=self.mask | other.mask)

    def __and__(self, other: "Effect") -> "Effect":
        return Effect(mask=self.mask & other.mask)

    def __sub__(self, other: "Effect") -> "Effect":
        return Effect(mask=self.mask & ~other.mask)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __lt__(self, other: "Effect") -> bool:
        # size first, then mask: a stable total order for sorting
        return (len(self), self.mask) < (len(other), other.mask)

    def relative_to(self, within: "Effect") -> "Effect":
        """Re-express this effect in the positions of the sub-scheme ``within``."""
        positions = within.positions()
        return Effect.from_positions(positions.index(p) for p in self.positions())

    def subsets(self) -> Iterator["Effect"]:
        """All subsets, the empty one included (standard submask walk)."""
        sub = self.mask
        while True:
            yield Effect(mask=sub)
            if sub == 0:
                break
            sub = (sub - 1) & self.mask


# ------------------------------------------------------------------------------
# One categorical variable
# ------------------------------------------------------------------------------
class Variable(BaseModel):
    """
    A categorical variable.

    :ivar name: Unique, non-empty name
    :ivar levels: Number of categories (at least 2)
    :ivar labels: Optional category labels in the declared level order
    """
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    levels: int = Field(ge=2)
    labels: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def _labels_match_levels(self) -> "Variable":
        if self.labels is not None:
            if len(self.labels) != self.levels:
                raise ValueError(
                    f"variable '{self.name}': {len(self.labels)} labels for {self.levels} levels")
            if len(set(self.labels)) != len(self.labels):
                raise ValueError(f"variable '{self.name}': duplicate level labels")
        return self

    def level_labels(self) -> Tuple[str, ...]:
        return self.labels if self.labels is not None else tuple(str(i + 1) for i in range(self.levels))


# ------------------------------------------------------------------------------
# Ordered list of variables
# ------------------------------------------------------------------------------
class VariableScheme(BaseModel):
    """
    Ordered list of categorical variables. Cells of every table over the scheme
    are laid out lexicographically with the last variable varying fastest
    (numpy C order).

    :ivar variables: The variables, in scheme order
    """
    model_config = ConfigDict(frozen=True)

    variables: Tuple[Variable, ...]

    @field_validator("variables")
    @classmethod
    def _check_variables(cls, variables: Tuple[Variable, ...]) -> Tuple[Variable, ...]:
        if not variables:
            raise ValueError("a scheme needs at least one variable")
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in {names}")
        if math.prod(v.levels for v in variables) > np.iinfo(np.intp).max:
            raise ValueError("cell count exceeds the addressable range")
        return variables

    # --- Construction helpers ---
    @classmethod
    def from_levels(cls, levels: Union[dict, Iterable[Tuple[str, int]]]) -> "VariableScheme":
        """Build from ``{"A": 2, "B": 3}`` or ``[("A", 2), ("B", 3)]``."""
        items = levels.items() if isinstance(levels, dict) else levels
        return cls(variables=tuple(Variable(name=n, levels=int(c)) for n, c in items))

    @classmethod
    def binary(cls, names: Union[str, Iterable[str]]) -> "VariableScheme":
        return cls(variables=tuple(Variable(name=n, levels=2) for n in names))

    # --- Basic properties ---
    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(v.levels for v in self.variables)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    @property
    def full(self) -> Effect:
        return Effect(mask=(1 << self.n_vars) - 1)

    @property
    def is_binary(self) -> bool:
        return all(v.levels == 2 for v in self.variables)

    def position(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemeError(f"unknown variable '{name}' (scheme: {', '.join(self.names)})") from None

    # --- Effects ---
    def effect(self, names: Union[str, Iterable[str], Effect]) -> Effect:
        """
        Convert variable names to an :class:`Effect`.

        A plain string is read as one variable name if it is one, otherwise as
        a concatenation of single-character names (``"ABC"``).
        """
        if isinstance(names, Effect):
            self.check(names)
            return names
        if isinstance(names, str):
            if names in self.names:
                names = [names]
            elif names in ("", "∅"):
                names = []
            else:
                names = list(names)
        return Effect.from_positions(self.position(n) for n in names)

    def check(self, effect: Effect) -> Effect:
        if not effect.issubset(self.full):
            raise SchemeError(f"effect mask {effect.mask:#b} is not part of the scheme")
        return effect

    def members(self, effect: Effect) -> Tuple[str, ...]:
        return tuple(self.names[p] for p in effect.positions())

    def label(self, effect: Effect) -> str:
        names = self.members(effect)
        if not names:
            return "∅"
        if all(len(n) == 1 for n in self.names):
            return "".join(names)
        return ",".join(names)

    def sub_scheme(self, effect: Effect) -> "VariableScheme":
        self.check(effect)
        if effect.is_empty:
            raise SchemeError("the empty marginal has no scheme")
        return VariableScheme(variables=tuple(self.variables[p] for p in effect.positions()))

    def shape_of(self, effect: Effect) -> Tuple[int, ...]:
        return tuple(self.variables[p].levels for p in effect.positions())

    def cells_of(self, effect: Effect) -> int:
        return math.prod(self.shape_of(effect))

    def all_effects(self) -> Iterator[Effect]:
        """Every subset of the scheme, ordered by mask."""
        for mask in range(1 << self.n_vars):
            yield Effect(mask=mask)

    def level_labels(self, position: int) -> Tuple[str, ...]:
        return self.variables[position].level_labels()

    def __len__(self) -> int:
        return self.n_vars


def parse_effects(scheme: VariableScheme, items: Iterable[Union[str, Iterable[str]]]) -> List[Effect]:
    """Convert a list of name-lists (or compact strings) to effects."""
    return [scheme.effect(item) for item in items]
