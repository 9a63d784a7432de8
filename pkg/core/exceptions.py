# Filename: core/exceptions.py
"""
Exception hierarchy shared by all packages.

Library code raises these; only the command-line layer turns them into
exit codes.
"""

from typing import Any, Dict, List, Optional, Sequence


class MarginalModelError(Exception):
    """Root of every error raised by this project."""


class SchemeError(MarginalModelError, ValueError):
    """Unknown variable, malformed scheme or shape mismatch."""


class PositivityError(MarginalModelError, ValueError):
    """A cell, marginal cell or lumped cell is zero where a logarithm is needed."""


class SequenceError(MarginalModelError, ValueError):
    """The marginal sequence is not non-decreasing or does not end in the full set."""


class InversionError(MarginalModelError, RuntimeError):
    """
    No table reproduces the requested parameter vector within the budget.

    :ivar iterations: Iterations spent before giving up
    :ivar residual: Last residual (max-abs)
    :ivar step: Index of the marginal step that failed, if known
    """

    def __init__(self, message: str, iterations: int = 0,
                 residual: float = float("nan"), step: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.step = step


class CompilationError(MarginalModelError, ValueError):
    """
    An independence list cannot be written as zero effects over any admissible sequence.

    :ivar witnesses: One record per failing (effect, marginal, statement) triple
    :ivar necessary_condition_failed: True when no sequence at all can work
    """

    def __init__(self, message: str, witnesses: Optional[List[Dict[str, Any]]] = None,
                 necessary_condition_failed: bool = False):
        super().__init__(message)
        self.witnesses = witnesses or []
        self.necessary_condition_failed = necessary_condition_failed


class GraphError(MarginalModelError, ValueError):
    """Cyclic DAG or invalid chain-component structure."""

    def __init__(self, message: str, cycle: Optional[Sequence[Any]] = None):
        super().__init__(message)
        self.cycle = list(cycle) if cycle else []


class EstimationError(MarginalModelError, RuntimeError):
    """Numerical failure inside a fitter that no fallback can repair."""
