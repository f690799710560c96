"""Input validation helpers used across the package and by the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError


def as_matrix(x, name: str = "array", *, dtype=np.float64) -> np.ndarray:
    """Coerce ``x`` to a 2-D contiguous array of ``dtype``.

    1-D input is treated as a single row. Anything else than 1-D/2-D is a
    shape error.
    """
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def as_index_vector(x, name: str = "indices") -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValidationError(f"{name} must hold integers")
    return arr.astype(np.int64)


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str = "array") -> np.ndarray:
    """Check shape against a template where ``None`` matches any size."""
    if len(arr.shape) != len(shape) or any(
        want is not None and got != want for got, want in zip(arr.shape, shape)
    ):
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)
