import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusmin.entropy.bowen import (
    EntropyReport,
    entropy_estimate,
    entropy_series,
    greedy_cover,
    greedy_separated,
    separated_set,
    spanning_set,
)
from torusmin.errors import InsufficientDataError, PreconditionError
from torusmin.flow import PhasePoint


def chain(n=5, gap=0.3, theta=0.0):
    return [PhasePoint((gap * i, 0.0), theta) for i in range(n)]


def brute_max_separated(D, eps):
    n = len(D)
    for k in range(n, 0, -1):
        for sub in itertools.combinations(range(n), k):
            if all(D[i, j] > eps for i, j in itertools.combinations(sub, 2)):
                return k
    return 0


def brute_min_cover(D, eps):
    n = len(D)
    for k in range(1, n + 1):
        for sub in itertools.combinations(range(n), k):
            if all(any(D[i, c] <= eps for c in sub) for i in range(n)):
                return k


def test_chain_separated(flat, flat_grid):
    pts = chain()
    for T in (0.0, 5.0, 20.0):
        kept = separated_set(pts, flat, T, 0.5, flat_grid)
        assert kept == [0, 2, 4]
    D = 0.3 * np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    assert brute_max_separated(D, 0.5) == 3


def test_chain_spanning(flat, flat_grid):
    pts = chain()
    cover = spanning_set(pts, flat, 5.0, 0.5, flat_grid)
    D = 0.3 * np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    assert brute_min_cover(D, 0.5) == 2
    assert len(cover) <= 3
    assert all(any(D[i, c] <= 0.5 for c in cover) for i in range(5))


def test_trivial_sets(flat, flat_grid):
    one = chain(1)
    assert separated_set(one, flat, 3.0, 0.5, flat_grid) == [0]
    assert spanning_set(one, flat, 3.0, 0.5, flat_grid) == [0]
    pts = chain()
    assert len(separated_set(pts, flat, 3.0, 5.0, flat_grid)) == 1
    assert len(spanning_set(pts, flat, 3.0, 5.0, flat_grid)) == 1
    with pytest.raises(PreconditionError):
        separated_set(pts, flat, 3.0, 0.0, flat_grid)


@given(st.lists(st.tuples(st.floats(0, 3), st.floats(0, 3)), min_size=1, max_size=9), st.floats(0.2, 1.5))
@settings(max_examples=60, deadline=None)
def test_greedy_sets_properties(points, eps):
    P = np.array(points)
    D = np.hypot(*(P[:, None] - P[None]).transpose(2, 0, 1))
    kept = greedy_separated(len(P), lambda i, j: D[i, j] > eps)
    assert all(D[i, j] > eps for i, j in itertools.combinations(kept, 2))
    # maximality: every rejected point is within eps of a kept one
    assert all(any(D[i, k] <= eps for k in kept) for i in range(len(P)))
    cover = greedy_cover(len(P), lambda i, j: D[i, j] <= eps)
    assert all(any(D[i, c] <= eps for c in cover) for i in range(len(P)))
    assert brute_min_cover(D, eps) <= len(cover)
    assert len(kept) <= brute_max_separated(D, eps)


def test_entropy_estimate_examples():
    T = [5, 10, 20, 40]
    lin, log = entropy_estimate(T, [math.exp(2)] * 4)
    assert lin == pytest.approx(0.0, abs=1e-12) and log == pytest.approx(0.0, abs=1e-12)
    lin, _ = entropy_estimate(T, [math.exp(0.7 * t) for t in T])
    assert lin == pytest.approx(0.7, abs=1e-9)
    lin, log = entropy_estimate(T, [3.0 * t for t in T])
    assert log == pytest.approx(1.0, abs=1e-9)
    assert lin == pytest.approx(math.log(2) / 20, abs=1e-9)
    T8 = [5 * 2**k for k in range(8)]
    lin8, _ = entropy_estimate(T8, [3.0 * t for t in T8])
    assert lin8 < lin


def test_entropy_estimate_needs_data():
    with pytest.raises(InsufficientDataError):
        entropy_estimate([5, 10, 20], [1, 2, 3])
    with pytest.raises(InsufficientDataError):
        entropy_estimate([5, 6, 7, 8], [1, 2, 3, 4])
    with pytest.raises(InsufficientDataError):
        entropy_estimate([5, 10, 20, 40], [1, 0, 3, 4])


def test_spanning_never_exceeds_separated(flat, flat_grid):
    rng = np.random.default_rng(5)
    for _ in range(20):
        pts = [PhasePoint(tuple(rng.uniform(0, 2, 2)), 0.0) for _ in range(10)]
        cover = spanning_set(pts, flat, 0.0, 0.6, flat_grid)
        kept = separated_set(pts, flat, 0.0, 0.6, flat_grid)
        assert len(cover) <= len(kept)


def test_entropy_series_flat(flat, flat_grid):
    # a fan of directions spreads linearly in T
    pts = [PhasePoint((0.0, 0.0), 0.02 * k) for k in range(12)]
    rep = entropy_series(pts, flat, 0.5, [5.0, 10.0, 20.0, 40.0], flat_grid)
    assert all(s <= r for s, r in zip(rep.spanning, rep.separated))
    assert all(a <= b for a, b in zip(rep.separated, rep.separated[1:]))
    assert isinstance(rep, EntropyReport)
    d = rep.to_dict()
    assert d["T"] == [5.0, 10.0, 20.0, 40.0]
    assert d["params"]["population"] == 12


def test_entropy_series_bumpy_invariants(bumpy, bumpy_grid):
    rng = np.random.default_rng(4)
    pts = [PhasePoint(tuple(rng.uniform(0, 1, 2)), float(rng.uniform(0, 2 * math.pi))) for _ in range(8)]
    rep = entropy_series(pts, bumpy, 0.5, [1.0, 2.0, 3.0], bumpy_grid)
    assert all(s <= r for s, r in zip(rep.spanning, rep.separated))
    assert all(a <= b for a, b in zip(rep.separated, rep.separated[1:]))
