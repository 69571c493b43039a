"""Input validation helpers used at module boundaries."""

from __future__ import annotations

import numpy as np

from .errors import DataError, UsageError


def as_f64_matrix(value, name: str) -> np.ndarray:
    """Coerce to a rank-2 float64 array with at least one row."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise UsageError(f"{name} must be a non-empty matrix, got shape {arr.shape}")
    return arr


def check_cols(matrix: np.ndarray, dim: int, name: str) -> None:
    if matrix.shape[1] != dim:
        raise UsageError(f"{name} has {matrix.shape[1]} columns, expected {dim}")


def check_finite(matrix: np.ndarray, name: str) -> None:
    if not np.isfinite(matrix).all():
        raise DataError(f"{name} contains non-finite values")


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")


def check_choice(value, options, name: str) -> None:
    if value not in options:
        raise UsageError(f"{name} must be one of {sorted(options)}, got {value!r}")
