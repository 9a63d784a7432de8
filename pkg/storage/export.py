# Filename: storage/export.py
"""
Result documents and atomic file writers.

Every writer goes through a temporary file in the target directory that is
renamed into place, so a reader never sees a half-written file.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from core.table import Table
from logic.estimation import FitResult
from logic.gee import GeeResult
from logic.graphs import path_ledger
from logic.modelspec import ModelSpec

log = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
# Atomic writers
# ------------------------------------------------------------------------------
def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    log.info(f"CLI: wrote {path}")


def table_frame(table: Table) -> pd.DataFrame:
    """Long format with every cell listed, last variable fastest."""
    scheme = table.scheme
    index = pd.MultiIndex.from_product([scheme.level_labels(p) for p in range(scheme.n_vars)],
                                       names=list(scheme.names))
    frame = index.to_frame(index=False)
    counts = table.flat
    frame["count"] = counts.astype(np.int64) if np.all(counts == np.round(counts)) else counts
    return frame


def table_csv(table: Table) -> str:
    return table_frame(table).to_csv(index=False, lineterminator="\n")


def write_table(path: Path, table: Table) -> None:
    _atomic_write(path, table_csv(table))
    log.info(f"CLI: wrote {path}")


# ------------------------------------------------------------------------------
# Result documents
# ------------------------------------------------------------------------------
def _floats(values: Optional[np.ndarray]):
    return None if values is None else [float(v) for v in np.asarray(values).reshape(-1)]


def _cells(table: Table):
    scheme = table.scheme
    labels = [scheme.level_labels(p) for p in range(scheme.n_vars)]
    out = []
    for flat, value in enumerate(table.flat):
        idx = np.unravel_index(flat, scheme.shape)
        cell = {name: labels[p][i] for p, (name, i) in enumerate(zip(scheme.names, idx))}
        out.append({"cell": cell, "value": float(value)})
    return out


def fit_document(result: FitResult, spec: ModelSpec) -> Dict[str, Any]:
    """JSON document of a maximum-likelihood fit."""
    return {
        "m_hat": _cells(result.m_hat),
        "lambda_hat": result.lambda_hat.as_dict(),
        "beta_hat": _floats(result.beta_hat),
        "G2": float(result.G2),
        "df": int(result.df),
        "p": float(result.p_value),
        "BIC": float(result.bic),
        "covariance": {
            "m_hat_diag": _floats(result.cov_m_diag),
            "beta_hat_diag": _floats(None if result.cov_beta is None else np.diag(result.cov_beta)),
        },
        "convergence": {
            "algorithm": result.algorithm,
            "converged": bool(result.converged),
            "iterations": int(result.iterations),
            "max_constraint_violation": float(result.max_constraint_violation),
            "score_norm": float(result.score_norm),
            "epsilon_flag": bool(result.epsilon_flag),
            "total_deviation": float(result.total_deviation),
        },
        "model": {"provenance": spec.provenance, "marginals": spec.param.sequence.labels(),
                  "coding": spec.param.coding},
    }


def gee_document(result: GeeResult, spec: ModelSpec) -> Dict[str, Any]:
    """JSON document of a GEE fit."""
    scheme = spec.scheme
    return {
        "marginals": [scheme.label(m) for m in result.marginals],
        "mu_tilde": _floats(result.mu_tilde),
        "lambda_tilde": result.lambda_tilde.as_dict(),
        "beta_tilde": _floats(result.beta_tilde),
        "beta_labels": list(result.beta_labels) if result.beta_labels is not None else None,
        "covariance": {
            "sandwich_diag": _floats(None if result.sandwich_cov is None else np.diag(result.sandwich_cov)),
            "model_diag": _floats(None if result.model_cov is None else np.diag(result.model_cov)),
        },
        "convergence": {
            "algorithm": f"gee-{result.solver}",
            "converged": bool(result.converged),
            "iterations": int(result.iterations),
            "residual": float(result.residual),
            "max_constraint_violation": float(result.max_constraint_violation),
            "epsilon_flag": bool(result.epsilon_flag),
        },
    }


def compile_document(spec: ModelSpec) -> Dict[str, Any]:
    """JSON document of a compiled model."""
    param = spec.param
    scheme = spec.scheme
    report = param.decomposability
    doc: Dict[str, Any] = {
        "provenance": spec.provenance,
        "marginals": param.sequence.labels(),
        "coding": param.coding,
        "zeroed_effects": [{"marginal": scheme.label(z.marginal), "effect": scheme.label(z.effect),
                            "dimension": z.dimension} for z in spec.zeroed_effects],
        "independences": [ci.label(scheme) for ci in spec.cis],
        "df": int(spec.df),
        "n_components": param.n_components,
        "decomposable": report.decomposable,
        "failing_prefix": report.failing_prefix,
    }
    if spec.provenance == "path":
        ledger = path_ledger(spec)
        doc["ledger"] = ledger.model_dump()
        doc["remaining_effects"] = ledger.remaining_effects
    return doc
