# Filename: ui/cli.py
"""
Command-line interface.

``fit``, ``compile``, ``check`` and ``simulate`` are thin click wrappers
around the ``cmd_*`` functions, which return the process exit code:

- 0: success
- 1: input error (unreadable or invalid files, unknown variables)
- 2: the fit did not converge or a linear solve failed
- 3: the model cannot be compiled (no admissible sequence, invalid graph)
"""

import json
import logging
from pathlib import Path
from typing import Literal, Optional

import click
import numpy as np
from pydantic import BaseModel, ValidationError, field_validator
from rich.console import Console

from config import settings
from config.logging_config import setup_logging
from core.exceptions import (CompilationError, EstimationError, GraphError, InversionError,
                             MarginalModelError)
from core.scheme import VariableScheme
from core.sequence import MarginalSequence, is_ordered_decomposable
from logic.estimation import FitOptions, fit
from logic.gee import GeeOptions, fit_gee
from logic.simulation import probabilities_from_model, sample_counts
from storage.export import compile_document, fit_document, gee_document, table_csv, write_json, write_table
from storage.import_manager import load_inputs, read_model, read_table, scheme_for
from .console import make_console, render_check, render_compile, render_error, render_fit

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_INFEASIBLE = 3

_HANDLED = (MarginalModelError, ValidationError, ValueError, np.linalg.LinAlgError, FloatingPointError)


# ------------------------------------------------------------------------------
# Run configuration
# ------------------------------------------------------------------------------
class RunConfig(BaseModel):
    """
    Validated command-line arguments.

    :ivar table: Count table (long CSV)
    :ivar model: Model file (JSON)
    :ivar out: Output file; stdout when omitted
    :ivar algorithm: ``lagrangian``, ``scoring`` or ``gee``
    :ivar epsilon: Replacement value for observed zero cells
    :ivar tol: Convergence tolerance
    :ivar max_iter: Iteration budget
    :ivar seed: Random seed for ``simulate``
    :ivar n: Sample size for ``simulate``
    """
    table: Optional[Path] = None
    model: Optional[Path] = None
    out: Optional[Path] = None
    algorithm: Literal["lagrangian", "scoring", "gee"] = "lagrangian"
    epsilon: float = settings.ZERO_CELL_EPSILON
    tol: float = settings.TOL_CONSTRAINT
    max_iter: int = settings.MAX_ITER
    seed: Optional[int] = None
    n: int = 0

    @field_validator("table", "model")
    @classmethod
    def _must_exist(cls, path: Optional[Path]) -> Optional[Path]:
        if path is not None and not path.is_file():
            raise ValueError(f"file not found: {path}")
        return path

    @field_validator("epsilon")
    @classmethod
    def _epsilon_range(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        return value

    @field_validator("tol")
    @classmethod
    def _positive_tol(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("tolerance must be positive")
        return value

    @field_validator("n")
    @classmethod
    def _nonnegative_n(cls, value: int) -> int:
        if value < 0:
            raise ValueError("sample size must be nonnegative")
        return value


def _fail(console: Console, error: Exception) -> int:
    """Print ``error`` and map it to an exit code."""
    if isinstance(error, ValidationError):
        render_error(console, "Invalid input", str(error))
        return EXIT_INPUT
    if isinstance(error, CompilationError):
        render_error(console, "Compilation failed", str(error), error.witnesses)
        return EXIT_INFEASIBLE
    if isinstance(error, GraphError):
        detail = f"{error}" + (f"\ncycle: {' -> '.join(error.cycle)}" if error.cycle else "")
        render_error(console, "Invalid graph", detail)
        return EXIT_INFEASIBLE
    if isinstance(error, (EstimationError, InversionError, np.linalg.LinAlgError, FloatingPointError)):
        render_error(console, "Fit failed", str(error))
        return EXIT_NOT_CONVERGED
    render_error(console, "Input error", str(error))
    return EXIT_INPUT


def _emit(doc: dict, out: Optional[Path]) -> None:
    if out is not None:
        write_json(out, doc)
    else:
        click.echo(json.dumps(doc, indent=2, ensure_ascii=False))


# ------------------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------------------
def cmd_fit(config: RunConfig, console: Console) -> int:
    """Fit a model file to a table; exit 2 when the fit does not converge."""
    try:
        if config.table is None or config.model is None:
            raise ValueError("fit needs --table and --model")
        table, _, spec = load_inputs(config.model, config.table,
                                     progress_callback=lambda msg: log.info(f"CLI: {msg}"))
        if config.algorithm == "gee":
            opts = GeeOptions(zero_cell_epsilon=config.epsilon, tol=config.tol, max_iter=config.max_iter)
            result = fit_gee(table, spec, opts)
            doc = gee_document(result, spec)
        else:
            opts = FitOptions(algorithm=config.algorithm, zero_cell_epsilon=config.epsilon,
                              tol_constraint=config.tol, tol_score=config.tol, max_iter=config.max_iter)
            result = fit(table, spec, opts)
            doc = fit_document(result, spec)
    except _HANDLED as e:
        log.error(f"CLI: fit failed: {e}")
        return _fail(console, e)
    render_fit(console, doc)
    _emit(doc, config.out)
    if not result.converged:
        console.print("[warn]the fit did not converge[/warn]")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_compile(config: RunConfig, console: Console) -> int:
    """Compile a model file; exit 3 when no admissible sequence exists."""
    try:
        if config.model is None:
            raise ValueError("compile needs --model")
        _, _, spec = load_inputs(config.model, config.table)
    except _HANDLED as e:
        log.error(f"CLI: compile failed: {e}")
        return _fail(console, e)
    doc = compile_document(spec)
    render_compile(console, doc)
    _emit(doc, config.out)
    return EXIT_OK


def _parse_sequence(text: str) -> MarginalSequence:
    """``AB,AC,ABC`` with single-character binary variables in order of appearance."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    names = []
    for part in parts:
        for ch in part:
            if ch not in names:
                names.append(ch)
    if not names:
        raise ValueError(f"no marginals in '{text}'")
    return MarginalSequence.create(VariableScheme.binary(names), parts)


def cmd_check(target: str, console: Console, out: Optional[Path] = None) -> int:
    """Ordered-decomposability check of a sequence string or a model file."""
    try:
        path = Path(target)
        if path.is_file():
            model = read_model(path)
            scheme = scheme_for(model)
            seq = (MarginalSequence.create(scheme, model.marginals) if model.marginals
                   else MarginalSequence.saturated(scheme))
        else:
            seq = _parse_sequence(target)
        report = is_ordered_decomposable(seq)
    except _HANDLED as e:
        log.error(f"CLI: check failed: {e}")
        return _fail(console, e)
    render_check(console, seq.scheme, seq.labels(), report)
    doc = {"marginals": seq.labels(), "decomposable": report.decomposable,
           "failing_prefix": report.failing_prefix}
    _emit(doc, out)
    return EXIT_OK


def cmd_simulate(config: RunConfig, console: Console) -> int:
    """Draw a multinomial table from a table or from a model's ``parameters``."""
    try:
        if config.table is not None:
            model = read_model(config.model) if config.model is not None else None
            source = read_table(config.table, model.levels if model else None)
        elif config.model is not None:
            _, model, spec = load_inputs(config.model)
            source = probabilities_from_model(spec.param, model.parameters)
        else:
            raise ValueError("simulate needs --table or --model")
        counts = sample_counts(source, config.n, seed=config.seed)
    except _HANDLED as e:
        log.error(f"CLI: simulate failed: {e}")
        return _fail(console, e)
    if config.out is not None:
        write_table(config.out, counts)
    else:
        click.echo(table_csv(counts), nl=False)
    console.print(f"[ok]simulated[/ok] N={config.n} over {counts.scheme.n_cells} cells")
    return EXIT_OK


# ------------------------------------------------------------------------------
# click wiring
# ------------------------------------------------------------------------------
def _config(ctx: click.Context, **kwargs) -> Optional[RunConfig]:
    try:
        return RunConfig(**kwargs)
    except ValidationError as e:
        ctx.exit(_fail(ctx.obj["console"], e))


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR.")
@click.option("--quiet", is_flag=True, help="Only print results and errors.")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], quiet: bool) -> None:
    """Marginal log-linear models for contingency tables."""
    setup_logging(log_level or ("ERROR" if quiet else None))
    ctx.ensure_object(dict)
    ctx.obj["console"] = make_console(quiet=quiet)


@cli.command("fit")
@click.option("--table", type=click.Path(path_type=Path), required=True)
@click.option("--model", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--algorithm", type=click.Choice(["lagrangian", "scoring", "gee"]), default="lagrangian")
@click.option("--epsilon", type=float, default=settings.ZERO_CELL_EPSILON)
@click.option("--tol", type=float, default=settings.TOL_CONSTRAINT)
@click.option("--max-iter", type=int, default=settings.MAX_ITER)
@click.pass_context
def fit_command(ctx, table, model, out, algorithm, epsilon, tol, max_iter):
    """Fit a model by maximum likelihood or GEE."""
    config = _config(ctx, table=table, model=model, out=out, algorithm=algorithm,
                     epsilon=epsilon, tol=tol, max_iter=max_iter)
    ctx.exit(cmd_fit(config, ctx.obj["console"]))


@cli.command("compile")
@click.option("--model", type=click.Path(path_type=Path), required=True)
@click.option("--table", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_context
def compile_command(ctx, model, table, out):
    """Compile independences or a graph into zero effects."""
    config = _config(ctx, model=model, table=table, out=out)
    ctx.exit(cmd_compile(config, ctx.obj["console"]))


@cli.command("check")
@click.argument("target")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_context
def check_command(ctx, target, out):
    """
    Check ordered decomposability of a sequence like AB,AC,ABC or of a model file.

    \b
    Prefixes are tested from length 3 on; failing_prefix is the number of
    leading marginals in the first prefix that fails, so AB,AC,BC,ABC
    reports 3.
    """
    ctx.exit(cmd_check(target, ctx.obj["console"], out))


@cli.command("simulate")
@click.option("--model", type=click.Path(path_type=Path), default=None)
@click.option("--table", type=click.Path(path_type=Path), default=None)
@click.option("--n", "n", type=int, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.pass_context
def simulate_command(ctx, model, table, n, seed, out):
    """Draw a multinomial table of size N."""
    config = _config(ctx, model=model, table=table, n=n, seed=seed, out=out)
    ctx.exit(cmd_simulate(config, ctx.obj["console"]))
