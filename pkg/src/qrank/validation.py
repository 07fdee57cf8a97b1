"""Input validation helpers used at every public boundary.

Conventions: vectors are 1-d float arrays, row matrices are 2-d (count x dim).
Validators return the checked (possibly converted) array so call sites can
chain them; failures raise DataError with a short message.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DataError


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name}: expected 1-d vector, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError(f"{name}: empty vector")
    check_finite(arr, name)
    return arr


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name}: expected 2-d array, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: non-finite values")
    return arr


def check_dim(arr: np.ndarray, dim: int, name: str = "vector") -> np.ndarray:
    if arr.shape[-1] != dim:
        raise DataError(f"{name}: dimension {arr.shape[-1]} != expected {dim}")
    return arr


def check_same_dim(arrays: Sequence[np.ndarray], name: str = "inputs") -> int:
    dims = {a.shape[-1] for a in arrays}
    if len(dims) != 1:
        raise DataError(f"{name}: mixed dimensions {sorted(dims)}")
    return dims.pop()


def check_probability(x: float, name: str = "value") -> float:
    x = float(x)
    if not (0.0 <= x <= 1.0) or not np.isfinite(x):
        raise DataError(f"{name}: {x} outside [0, 1]")
    return x


def check_unit_norm(v: np.ndarray, tol: float = 1e-6, name: str = "vector") -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise DataError(f"{name}: norm {norm:.9f} not within {tol} of 1")
    return v
