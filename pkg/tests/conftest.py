# Dateiname: tests/conftest.py
"""
Gemeinsame Fixtures für die Testsuite.
"""

import numpy as np
import pytest

from core.scheme import VariableScheme
from core.sequence import MarginalSequence
from core.table import Table
from logic.parameterization import build


@pytest.fixture
def ab_scheme() -> VariableScheme:
    return VariableScheme.binary("AB")


@pytest.fixture
def abc_scheme() -> VariableScheme:
    return VariableScheme.binary("ABC")


@pytest.fixture
def mh_table(ab_scheme) -> Table:
    """Quadratische 2x2-Tafel für marginale Homogenität (b=15, c=5)."""
    return Table.from_counts(ab_scheme, [[30, 15], [5, 50]])


@pytest.fixture
def mh_param(ab_scheme):
    """Parametrisierung über (A, B, AB)."""
    return build(ab_scheme, MarginalSequence.create(ab_scheme, ["A", "B", "AB"]))


@pytest.fixture
def positive_abc(abc_scheme) -> Table:
    """Streng positive 2x2x2-Tafel ohne besondere Struktur."""
    rng = np.random.default_rng(20240611)
    return Table.from_counts(abc_scheme, rng.integers(5, 60, size=abc_scheme.shape))
