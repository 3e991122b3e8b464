from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from leaklab.errors import DomainError, UndefinedCorrelationError
from leaklab.metrics import (
    CorrelationResult,
    aggregate,
    average_ranks,
    correlate,
    plcc,
    srocc,
)


def test_small_examples():
    x, y = [1, 2, 3, 4, 5], [2, 1, 4, 3, 5]
    assert plcc(x, y) == pytest.approx(0.8)
    assert srocc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    # 15.5 / sqrt(5 * 62.75)
    assert plcc([0, 1, 2, 3], [0, 1, 2, 10]) == pytest.approx(0.8751, abs=1e-3)


def test_ties_share_average_ranks():
    np.testing.assert_allclose(average_ranks([10, 20, 20, 30]), [1, 2.5, 2.5, 4])
    assert srocc([1, 2, 2, 3], [1, 2, 2, 3]) == pytest.approx(1.0)


def test_ranks_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.integers(0, 6, size=rng.integers(2, 9)).astype(float)
        brute = [(x < v).sum() + ((x == v).sum() + 1) / 2 for v in x]
        np.testing.assert_allclose(average_ranks(x), brute)


_vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=30)


@given(x=_vectors, data=st.data())
def test_affine_and_symmetry(x, data):
    y = data.draw(st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(x), max_size=len(x)))
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    r = plcc(x, y)
    assert -1.0 <= r <= 1.0
    assert plcc(y, x) == pytest.approx(r, abs=1e-9)
    assert srocc(y, x) == pytest.approx(srocc(x, y), abs=1e-9)
    assert plcc(2.5 * np.asarray(x) + 7, y) == pytest.approx(r, abs=1e-6)
    assert plcc(-np.asarray(x), y) == pytest.approx(-r, abs=1e-9)


@given(x=st.lists(st.integers(-20, 20), min_size=3, max_size=30), data=st.data())
def test_srocc_ignores_monotone_transforms(x, data):
    y = data.draw(st.lists(st.integers(-20, 20), min_size=len(x), max_size=len(x)))
    assume(len(set(x)) > 1 and len(set(y)) > 1)
    xs = np.asarray(x, dtype=float)
    base = srocc(xs, y)
    assert srocc(np.exp(xs / 10), y) == pytest.approx(base, abs=1e-9)
    assert srocc(xs**3, y) == pytest.approx(base, abs=1e-9)


def test_constant_input_is_undefined():
    with pytest.raises(UndefinedCorrelationError):
        plcc([1, 1, 1], [1, 2, 3])
    result = correlate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    assert result == CorrelationResult(plcc=None, srocc=None, n=3)
    assert not result.defined


@pytest.mark.parametrize("x, y", [([1.0], [2.0]), ([1, 2], [1, 2, 3]), ([1, np.inf], [1, 2])])
def test_invalid_pairs(x, y):
    with pytest.raises(DomainError):
        plcc(x, y)


def test_aggregate_uses_sample_std():
    runs = [CorrelationResult(plcc=0.6, srocc=0.5, n=10), CorrelationResult(plcc=0.8, srocc=0.5, n=10)]
    summary = aggregate(runs)
    assert summary.plcc.mean == pytest.approx(0.70)
    assert summary.plcc.std == pytest.approx(0.1414, abs=1e-4)
    assert summary.srocc.std == 0.0
    assert str(summary.plcc) == "0.70 (±0.14)"


def test_aggregate_rejects_empty_and_undefined():
    with pytest.raises(DomainError):
        aggregate([])
    with pytest.raises(DomainError):
        aggregate([CorrelationResult(plcc=None, srocc=None, n=3)])
