# Filename: core/table.py
"""
Dense contingency tables, marginalization and the stacked marginalization
matrix ``M`` of ``lambda = B' log M' m``.
"""

import logging
from typing import Iterable, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import sparse

from .exceptions import PositivityError, SchemeError
from .scheme import Effect, VariableScheme

log = logging.getLogger(__name__)

TableKind = Literal["counts", "probabilities"]


# ------------------------------------------------------------------------------
# Immutable dense table
# ------------------------------------------------------------------------------
class Table(BaseModel):
    """
    Nonnegative cell array over a scheme, stored with shape ``scheme.shape``.

    :ivar scheme: Variable scheme
    :ivar cells: Cell values; flattening in C order gives the documented cell order
    :ivar kind: ``counts`` (or expected frequencies) or ``probabilities``
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scheme: VariableScheme
    cells: np.ndarray
    kind: TableKind = "counts"

    @model_validator(mode="before")
    @classmethod
    def _coerce_cells(cls, data):
        if isinstance(data, dict) and "cells" in data and "scheme" in data:
            scheme = data["scheme"]
            arr = np.array(data["cells"], dtype=float)
            if arr.size != scheme.n_cells:
                raise SchemeError(
                    f"table has {arr.size} cells, scheme expects {scheme.n_cells}")
            arr = arr.reshape(scheme.shape)
            arr.setflags(write=False)
            data = {**data, "cells": arr}
        return data

    @model_validator(mode="after")
    def _check_values(self) -> "Table":
        if not np.all(np.isfinite(self.cells)):
            raise ValueError("table cells must be finite")
        if np.any(self.cells < 0):
            raise ValueError("table cells must be nonnegative")
        if self.kind == "probabilities" and abs(self.cells.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {self.cells.sum()!r}, expected 1")
        return self

    # --- Constructors ---
    @classmethod
    def from_counts(cls, scheme: VariableScheme, cells) -> "Table":
        return cls(scheme=scheme, cells=cells, kind="counts")

    @classmethod
    def from_probabilities(cls, scheme: VariableScheme, cells) -> "Table":
        arr = np.asarray(cells, dtype=float)
        return cls(scheme=scheme, cells=arr / arr.sum(), kind="probabilities")

    @classmethod
    def uniform(cls, scheme: VariableScheme) -> "Table":
        return cls.from_probabilities(scheme, np.ones(scheme.shape))

    # --- Views ---
    @property
    def total(self) -> float:
        return float(self.cells.sum())

    @property
    def flat(self) -> np.ndarray:
        return self.cells.reshape(-1)

    def normalized(self) -> "Table":
        """Probability version of this table."""
        if self.kind == "probabilities":
            return self
        total = self.total
        if total <= 0:
            raise PositivityError("cannot normalize a table with zero total")
        return Table(scheme=self.scheme, cells=self.cells / total, kind="probabilities")

    def with_cells(self, cells, kind: Optional[TableKind] = None) -> "Table":
        return Table(scheme=self.scheme, cells=cells, kind=kind or self.kind)

    def require_positive(self, floor: float = 1e-300) -> "Table":
        if np.any(self.cells < floor):
            raise PositivityError("table has zero (or sub-floor) cells")
        return self


# ------------------------------------------------------------------------------
# Marginalization
# ------------------------------------------------------------------------------
def marginal_array(cells: np.ndarray, scheme: VariableScheme, marginal: Effect) -> np.ndarray:
    """Sum ``cells`` (shaped like ``scheme``) over every axis outside ``marginal``."""
    scheme.check(marginal)
    drop = tuple(p for p in range(scheme.n_vars) if not (marginal.mask >> p) & 1)
    return cells.sum(axis=drop) if drop else cells


def marginalize(table: Table, marginal: Effect) -> Table:
    """
    Marginal table over ``marginal``; the kind is preserved.

    :raises SchemeError: if the marginal is not part of the scheme or is empty
    """
    sub = table.scheme.sub_scheme(marginal)
    return Table(scheme=sub, cells=marginal_array(table.cells, table.scheme, marginal), kind=table.kind)


def marginal_index(scheme: VariableScheme, marginal: Effect) -> np.ndarray:
    """For every full-table cell (C order), the flat index of its marginal cell."""
    scheme.check(marginal)
    positions = marginal.positions()
    if not positions:
        return np.zeros(scheme.n_cells, dtype=np.intp)
    coords = np.unravel_index(np.arange(scheme.n_cells), scheme.shape)
    return np.ravel_multi_index(tuple(coords[p] for p in positions), scheme.shape_of(marginal))


def marginalization_matrix(scheme: VariableScheme, marginals: Iterable[Effect]) -> sparse.csr_matrix:
    """
    Sparse 0/1 matrix with one column per marginal cell, stacked over the
    marginals in order, so that ``M.T @ m`` stacks the marginal tables.
    """
    blocks: List[sparse.csr_matrix] = []
    rows = np.arange(scheme.n_cells)
    for marginal in marginals:
        cols = marginal_index(scheme, marginal)
        width = scheme.cells_of(marginal)
        blocks.append(sparse.csr_matrix(
            (np.ones(scheme.n_cells), (rows, cols)), shape=(scheme.n_cells, width)))
    if not blocks:
        return sparse.csr_matrix((scheme.n_cells, 0))
    return sparse.hstack(blocks, format="csr")
