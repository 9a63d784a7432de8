# Filename: storage/import_manager.py
"""
Reads count tables and model files and turns them into library objects.

Tables are long CSV files: one column per variable plus a final ``count``
column. Category combinations that are not listed are zero and repeated
combinations are added up. Level order is the order of first appearance
unless the model file pins it with a ``levels`` block.

Model files are JSON documents validated against :class:`ModelFile`; the
compiled :class:`ModelSpec` is produced by :func:`build_spec`.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.exceptions import SchemeError
from core.scheme import Variable, VariableScheme
from core.sequence import MarginalSequence
from core.table import Table
from logic.estimation import ProgressCallback, report_progress
from logic.graphs import DirectedGraph, compile_chain_type4, compile_dag, compile_path
from logic.modelspec import CIStatement, ModelSpec, compile_ci, equality_model, zero_effect_model
from logic.parameterization import build
from .models import EffectRef, EqualityPair, ModelFile, load_model_from_dict

log = logging.getLogger(__name__)

COUNT_COLUMN = "count"


# ------------------------------------------------------------------------------
# Tables
# ------------------------------------------------------------------------------
def table_from_frame(frame: pd.DataFrame, levels: Optional[Dict[str, List[str]]] = None) -> Table:
    """
    Count table from a long data frame with a trailing ``count`` column.

    :raises SchemeError: on a missing count column, bad counts or unknown pinned levels
    """
    levels = levels or {}
    columns = [str(c) for c in frame.columns]
    if not columns or columns[-1] != COUNT_COLUMN:
        raise SchemeError(f"last column must be '{COUNT_COLUMN}', found {columns[-1:] or 'none'}")
    names = columns[:-1]
    if not names:
        raise SchemeError("table has no variable columns")
    unknown = set(levels) - set(names)
    if unknown:
        raise SchemeError(f"levels given for variables not in the table: {sorted(unknown)}")

    counts = pd.to_numeric(frame[COUNT_COLUMN], errors="coerce")
    bad = counts.isna() | (counts < 0)
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        # header is line 1
        raise SchemeError(f"line {row + 2}, field '{COUNT_COLUMN}': "
                          f"count must be a nonnegative number, got {frame[COUNT_COLUMN].iloc[row]!r}")

    variables, codes = [], []
    for name in names:
        values = frame[name].astype(str)
        if name in levels:
            order = list(levels[name])
            stray = sorted(set(values) - set(order))
            if stray:
                row = int(np.argmax(~values.isin(order).to_numpy()))
                raise SchemeError(f"line {row + 2}, field '{name}': level {stray[0]!r} is not among {order}")
        else:
            order = list(pd.unique(values))
        if len(order) < 2:
            raise SchemeError(f"variable '{name}' has fewer than two levels")
        variables.append(Variable(name=name, levels=len(order), labels=tuple(order)))
        codes.append(pd.Categorical(values, categories=order).codes)

    scheme = VariableScheme(variables=tuple(variables))
    cells = np.zeros(scheme.n_cells)
    flat = np.ravel_multi_index(tuple(codes), scheme.shape)
    np.add.at(cells, flat, counts.to_numpy(dtype=float))
    return Table.from_counts(scheme, cells)


def read_table(path: Path, levels: Optional[Dict[str, List[str]]] = None) -> Table:
    """
    Read a long CSV count table.

    :raises SchemeError: on unreadable or malformed files
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemeError(f"cannot read table '{path}': {e}") from e
    table = table_from_frame(frame, levels)
    log.info(f"TABLE: read {path} with {table.scheme.n_cells} cells, N={table.total:g}")
    return table


# ------------------------------------------------------------------------------
# Model files
# ------------------------------------------------------------------------------
def read_model(path: Path) -> ModelFile:
    """
    Read and validate a model file.

    :raises SchemeError: on unreadable files or invalid JSON (with line and column)
    :raises pydantic.ValidationError: on schema violations
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemeError(f"invalid JSON in '{path}' at line {e.lineno}, column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise SchemeError(f"cannot read model '{path}': {e}") from e
    if not isinstance(raw, dict):
        raise SchemeError(f"model file '{path}' must contain a JSON object")
    return load_model_from_dict(raw)


def scheme_for(model: ModelFile, table: Optional[Table] = None) -> VariableScheme:
    """
    Variable scheme of a model: the table's when one is given, otherwise
    built from ``levels`` and ``variables`` (levels first, in file order).

    :raises SchemeError: if neither source is available
    """
    if table is not None:
        missing = set(model.variables) - set(table.scheme.names)
        if missing:
            raise SchemeError(f"model variables {sorted(missing)} are not in the table")
        return table.scheme
    variables = [Variable(name=n, levels=len(labels), labels=tuple(labels)) for n, labels in model.levels.items()]
    variables += [Variable(name=n, levels=c) for n, c in model.variables.items() if n not in model.levels]
    if not variables:
        raise SchemeError("model file needs 'levels' or 'variables' when no table is given")
    return VariableScheme(variables=tuple(variables))


def _effect_ref(ref: EffectRef):
    return ref.effect if ref.marginal is None else (ref.marginal, ref.effect)


def _zero_item(entry):
    return _effect_ref(entry) if isinstance(entry, EffectRef) else entry


def _equality_pair(spec: ModelSpec, entry) -> Tuple:
    if not isinstance(entry, EqualityPair):
        return tuple(entry)
    scheme = spec.scheme
    for ref in (entry.left, entry.right):
        if ref.marginal is not None and spec.param.housed_in(scheme.effect(ref.effect)) != scheme.effect(ref.marginal):
            raise SchemeError(f"effect {ref.effect} is not housed in marginal {ref.marginal}")
    return entry.left.effect, entry.right.effect


def _sequence(model: ModelFile, scheme: VariableScheme) -> Optional[MarginalSequence]:
    return MarginalSequence.create(scheme, model.marginals) if model.marginals else None


def build_spec(model: ModelFile, scheme: VariableScheme) -> ModelSpec:
    """
    Compile a model file over ``scheme``.

    :raises CompilationError: if the independences admit no sequence
    :raises GraphError: on an invalid graph
    :raises SchemeError: on unknown variables or effects
    """
    seq = _sequence(model, scheme)
    coding = model.coding
    if model.dag is not None:
        graph = DirectedGraph(scheme=scheme, edges=tuple(tuple(e) for e in model.dag.edges))
        if model.path:
            spec = compile_path(graph, sequence=seq, coding=coding)
        else:
            _, _, spec = compile_dag(graph, sequence=seq, coding=coding)
    elif model.chain is not None:
        graph = DirectedGraph(scheme=scheme, kind="chain",
                              edges=tuple(tuple(e) for e in model.chain.edges),
                              lines=tuple(tuple(e) for e in model.chain.lines),
                              components=tuple(tuple(c) for c in model.chain.components))
        param = build(scheme, seq, coding) if seq is not None else None
        spec = compile_chain_type4(graph, param=param, coding=coding)
    elif model.independences:
        cis = [CIStatement.of(scheme, e.a, e.b, e.given) for e in model.independences]
        spec = compile_ci(cis, seq=seq, scheme=scheme, coding=coding)
    else:
        param = build(scheme, seq or MarginalSequence.saturated(scheme), coding)
        spec = zero_effect_model(param, [])

    if model.zero_effects:
        extra = [_zero_item(e) for e in model.zero_effects]
        spec = zero_effect_model(spec.param, list(spec.zeroed_effects) + extra,
                                 provenance=spec.provenance, cis=spec.cis)
    if model.equality_constraints:
        pairs = [_equality_pair(spec, e) for e in model.equality_constraints]
        spec = equality_model(spec.param, pairs, base=spec)
    log.info(f"COMPILE: model over {scheme.names} compiled to {spec.provenance}, df={spec.df}")
    return spec


def load_inputs(model_path: Path, table_path: Optional[Path] = None,
                progress_callback: ProgressCallback = None) -> Tuple[Optional[Table], ModelFile, ModelSpec]:
    """
    Read a model file (and optionally a table) and compile the model.
    """
    # --- Step 1: model file ---
    report_progress(progress_callback, f"Reading model: {Path(model_path).name}")
    model = read_model(model_path)

    # --- Step 2: table ---
    table = None
    if table_path is not None:
        report_progress(progress_callback, f"Reading table: {Path(table_path).name}")
        table = read_table(table_path, model.levels)

    # --- Step 3: compile ---
    scheme = scheme_for(model, table)
    report_progress(progress_callback, f"Compiling model over {', '.join(scheme.names)}")
    return table, model, build_spec(model, scheme)

