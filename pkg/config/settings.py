# Filename: config/settings.py
"""
Numeric defaults for fitting, inversion and compilation.

Every constant can be overridden by an environment variable of the same name
with an ``MLL_`` prefix (e.g. ``MLL_TOL_CONSTRAINT=1e-10``); a ``.env`` file in
the working directory is read once at import.
"""
import os
import logging

from dotenv import load_dotenv

log = logging.getLogger(__name__)

load_dotenv()


def _env(name: str, default, cast=float):
    raw = os.environ.get(f"MLL_{name}")
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        log.warning(f"CONFIG: ignoring MLL_{name}={raw!r} (not a valid {cast.__name__})")
        return default


# --- Maximum likelihood ---
ZERO_CELL_EPSILON = _env("ZERO_CELL_EPSILON", 1e-6)
TOL_CONSTRAINT = _env("TOL_CONSTRAINT", 1e-8)
TOL_SCORE = _env("TOL_SCORE", 1e-8)
MAX_ITER = _env("MAX_ITER", 5000, int)
MAX_HALVINGS = _env("MAX_HALVINGS", 30, int)
RIDGE = _env("RIDGE", 1e-10)
SCORING_INNER_SWEEPS = _env("SCORING_INNER_SWEEPS", 500, int)
DIRECT_LAMBDA_THRESHOLD = _env("DIRECT_LAMBDA_THRESHOLD", 256, int)
COVARIANCE_MAX_CELLS = _env("COVARIANCE_MAX_CELLS", 4096, int)

# --- Inversion (mixed parameterization / IPF) ---
IPF_TOL = _env("IPF_TOL", 1e-12)
INVERT_TOL = _env("INVERT_TOL", 1e-10)
INVERT_MAX_ITER = _env("INVERT_MAX_ITER", 10000, int)
POSITIVITY_FLOOR = _env("POSITIVITY_FLOOR", 1e-300)

# --- GEE ---
GEE_TOL = _env("GEE_TOL", 1e-8)
GEE_MAX_ITER = _env("GEE_MAX_ITER", 500, int)

# --- Compilation ---
SEQUENCE_SEARCH_LIMIT = _env("SEQUENCE_SEARCH_LIMIT", 8, int)

# --- Logging ---
LOG_LEVEL = os.environ.get("MLL_LOG_LEVEL", "INFO")
