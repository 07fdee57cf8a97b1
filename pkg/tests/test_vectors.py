from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qrank.errors import DataError
from qrank.vectors import inner, l2_normalize, mean_pairwise_cosine, normalize_rows


def test_three_four_five_triangle():
    out = l2_normalize(np.array([3.0, 4.0]))
    assert np.allclose(out, [0.6, 0.8], atol=1e-12)


def test_unit_vector_unchanged():
    v = np.array([0.0, 1.0, 0.0])
    assert np.allclose(l2_normalize(v), v, atol=1e-12)


def test_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=8)
        once = l2_normalize(v)
        assert np.allclose(l2_normalize(once), once, atol=1e-9)


def test_zero_vector_rejected():
    with pytest.raises(DataError):
        l2_normalize(np.zeros(4))


def test_nan_rejected():
    with pytest.raises(DataError):
        l2_normalize(np.array([1.0, np.nan]))


@given(st.integers(0, 10_000))
def test_random_norm_is_one(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=int(rng.integers(2, 32)))
    if np.linalg.norm(v) <= 1e-12:
        return
    assert abs(np.linalg.norm(l2_normalize(v)) - 1.0) <= 1e-9


def test_normalize_rows_matches_per_row():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(10, 6))
    out = normalize_rows(rows)
    for i in range(10):
        assert np.allclose(out[i], l2_normalize(rows[i]), atol=1e-12)


def test_normalize_rows_zero_row_rejected():
    rows = np.ones((3, 4))
    rows[1] = 0.0
    with pytest.raises(DataError):
        normalize_rows(rows)


def test_inner_is_float64_dot():
    a = np.array([1.0, 2.0, 3.0], dtype=np.float32)
    b = np.array([4.0, 5.0, 6.0], dtype=np.float32)
    assert inner(a, b) == pytest.approx(32.0, abs=1e-9)


def test_mean_pairwise_cosine_hand_case():
    views = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    assert mean_pairwise_cosine(views) == pytest.approx(0.5, abs=1e-12)


def test_mean_pairwise_cosine_needs_two():
    with pytest.raises(DataError):
        mean_pairwise_cosine(np.ones((1, 4)))
