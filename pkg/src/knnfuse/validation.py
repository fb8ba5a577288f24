"""Input validation helpers used at the package boundaries."""
from __future__ import annotations

import numpy as np

from .errors import DimMismatch, InvalidPosteriors

# Tolerance on posterior row sums at ingest. Float32 round-trips through
# files drift row sums away from 1 by much less than this.
POSTERIOR_ROW_TOL = 1e-4


def as_float32_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a C-contiguous 2-D float32 array."""
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if arr.ndim != 2:
        raise DimMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_query_vector(q, dim: int) -> np.ndarray:
    """Return ``q`` as a 1-D float32 vector of length ``dim``."""
    arr = np.ascontiguousarray(q, dtype=np.float32).reshape(-1)
    if arr.shape[0] != dim:
        raise DimMismatch(f"query has dim {arr.shape[0]}, expected {dim}")
    return arr


def check_posterior_matrix(p: np.ndarray, tol: float = POSTERIOR_ROW_TOL) -> None:
    """Check that every row of ``p`` is a probability distribution.

    Rows must be non-negative and sum to 1 within ``tol``. NaNs fail the
    sum check. Raises InvalidPosteriors otherwise.
    """
    if p.shape[0] == 0:
        return
    if (p < 0).any():
        raise InvalidPosteriors("posterior matrix has negative entries")
    sums = p.sum(axis=1, dtype=np.float64)
    bad = ~(np.abs(sums - 1.0) <= tol)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise InvalidPosteriors(
            f"posterior row {row} sums to {sums[row]!r}, outside 1 +/- {tol}"
        )


def freeze(arr: np.ndarray) -> np.ndarray:
    """Mark an array read-only so constructed objects stay immutable."""
    if arr.flags.writeable:
        arr.flags.writeable = False
    return arr
