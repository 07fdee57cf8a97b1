"""Small vector kernels shared by the losses, search, and fusion code.

Disk vectors are float32; every accumulation here runs in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .validation import as_vector

_ZERO_TOL = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, preserving direction.

    Raises DataError on (numerically) zero vectors: a zero embedding has no
    direction and would silently poison cosine-style scores downstream.
    """
    v = as_vector(v, "l2_normalize input")
    norm = float(np.linalg.norm(v))
    if norm <= _ZERO_TOL:
        raise DataError("l2_normalize: zero vector")
    return v / norm


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize for a (count, dim) matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms <= _ZERO_TOL):
        bad = int(np.argmax(norms <= _ZERO_TOL))
        raise DataError(f"normalize_rows: zero vector at row {bad}")
    return rows / norms[:, None]


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner-product score f(a, b) accumulated in float64."""
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def mean_pairwise_cosine(views: np.ndarray) -> float:
    """Mean cosine over all unordered view pairs of a (n, d) stack."""
    views = np.asarray(views, dtype=np.float64)
    n = views.shape[0]
    if n < 2:
        raise DataError("mean_pairwise_cosine: needs >= 2 views")
    norms = np.linalg.norm(views, axis=1)
    if np.any(norms <= _ZERO_TOL):
        raise DataError("mean_pairwise_cosine: zero-norm view")
    unit = views / norms[:, None]
    gram = unit @ unit.T
    total = (gram.sum() - np.trace(gram)) / 2.0
    return float(total * 2.0 / (n * (n - 1)))
