"""Dense float64 linear-algebra substrate.

Matrices are 2-D C-contiguous ``numpy.ndarray`` objects of dtype float64
(row-major), vectors are 1-D float64 arrays. The helpers here validate
shapes and finiteness and raise package errors instead of numpy's
broadcasting surprises.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyInputError, ShapeError

DTYPE = np.float64


def as_matrix(values, *, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(values, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def as_vector(values, *, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def check_finite(a: np.ndarray, *, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return a


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=DTYPE)


def zeros(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def column_mean(m) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[0] == 0:
        raise EmptyInputError("column_mean of a matrix with no rows")
    # averaging deviations from the first row keeps identical rows exact
    return m[0] + (m - m[0]).mean(axis=0)


def frobenius_norm_sq(v) -> float:
    v = np.asarray(v, dtype=DTYPE)
    return float(np.dot(v.ravel(), v.ravel()))


def dot(a, b) -> float:
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.dot(a, b))


def norm(v) -> float:
    return math.sqrt(frobenius_norm_sq(v))


def argmax_row(m, row: int) -> int:
    """Index of the row maximum; ties resolve to the smallest index."""
    m = as_matrix(m)
    if m.shape[1] < 1:
        raise ShapeError("argmax_row needs at least one column")
    if not 0 <= row < m.shape[0]:
        raise IndexError(f"row {row} out of range for {m.shape[0]} rows")
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(m[row]))


def argmax_rows(m) -> np.ndarray:
    m = as_matrix(m)
    if m.shape[1] < 1:
        raise ShapeError("argmax_rows needs at least one column")
    return np.argmax(m, axis=1).astype(np.int64)
