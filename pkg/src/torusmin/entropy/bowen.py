"""Bowen separated and spanning sets under the dynamical distance, and growth fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientDataError, PreconditionError
from ..flow import GeodesicPath, PhasePoint, integrate, sample_times, sup_exceeds
from ..geometry.grid import Grid
from ..geometry.metric import MetricField

SLOPE_TOL = 0.05


def _orbit_samples(m: MetricField, points, T: float, spacing: float, **kw) -> np.ndarray:
    """Positions of every orbit at the sampled times of [0, T+1], shape (n, k, 2)."""
    ts = sample_times(T + 1, spacing)
    out = []
    for p in points:
        path = getattr(p, "path", p)
        if isinstance(path, PhasePoint):
            path = integrate(m, path, T + 1, spacing=spacing, **kw)
        if not isinstance(path, GeodesicPath):
            raise PreconditionError("points must be phase points, paths or minimal records")
        out.append(path.at(ts))
    return np.array(out)


class DbarOracle:
    """Threshold queries d-bar_T(i, j) > eps over a fixed orbit sample, memoised."""

    def __init__(self, m: MetricField, points, T: float, grid: Grid, spacing: float = 0.05, **kw):
        self.m = m
        self.grid = grid
        self.samples = _orbit_samples(m, points, T, spacing, **kw)
        self._cache = {}

    def __len__(self):
        return len(self.samples)

    def far(self, i: int, j: int, eps: float) -> bool:
        key = (min(i, j), max(i, j), eps)
        if key not in self._cache:
            if i == j:
                self._cache[key] = False
            else:
                self._cache[key] = sup_exceeds(self.m, self.samples[i], self.samples[j], self.grid, eps)
        return self._cache[key]


def greedy_separated(n: int, far) -> list:
    """Scan 0..n-1 and keep an index iff it is far from every kept index."""
    kept = []
    for i in range(n):
        if all(far(i, k) for k in kept):
            kept.append(i)
    return kept


def greedy_cover(n: int, near) -> list:
    """Repeatedly pick the index covering most uncovered indices (ties: smallest index)."""
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, i] = True
        for j in range(i + 1, n):
            adj[i, j] = adj[j, i] = near(i, j)
    uncovered = np.ones(n, dtype=bool)
    centers = []
    while uncovered.any():
        gain = (adj & uncovered[None, :]).sum(1)
        best = int(np.argmax(gain))
        centers.append(best)
        uncovered &= ~adj[best]
    return centers


def separated_set(points, m: MetricField, T: float, eps: float, grid: Grid, oracle=None, **kw) -> list:
    """Indices of a greedy maximal (T, eps)-separated subset (d-bar_T > eps pairwise).

    Greedy maximality is not maximum cardinality; the count is a lower
    bound for r_T.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    oracle = oracle or DbarOracle(m, points, T, grid, **kw)
    return greedy_separated(len(oracle), lambda i, j: oracle.far(i, j, eps))


def spanning_set(points, m: MetricField, T: float, eps: float, grid: Grid, oracle=None, **kw) -> list:
    """Indices of a greedy (T, eps)-spanning subset of the given points.

    A maximal separated set also spans, so the greedy cover is replaced by
    it whenever that is smaller; hence s_T <= r_T always.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    oracle = oracle or DbarOracle(m, points, T, grid, **kw)
    cover = greedy_cover(len(oracle), lambda i, j: not oracle.far(i, j, eps))
    kept = greedy_separated(len(oracle), lambda i, j: oracle.far(i, j, eps))
    return kept if len(kept) < len(cover) else cover


def entropy_estimate(T, counts):
    """Tail-half least-squares slopes of log(count) against T and against log T."""
    T = np.asarray(T, dtype=float)
    c = np.asarray(counts, dtype=float)
    if len(T) < 4 or len(T) != len(c):
        raise InsufficientDataError("need at least 4 (T, count) observations")
    if T.min() <= 0 or T.max() / T.min() < 4 - 1e-12:
        raise InsufficientDataError("T values must span at least a factor 4")
    if np.any(c <= 0):
        raise InsufficientDataError("counts must be positive")
    order = np.argsort(T)
    T, c = T[order], c[order]
    k = max(2, int(math.ceil(len(T) / 2)))
    tail = slice(len(T) - k, None)
    y = np.log(c[tail])
    slope_linear = float(np.polyfit(T[tail], y, 1)[0])
    slope_log = float(np.polyfit(np.log(T[tail]), y, 1)[0])
    return slope_linear, slope_log


@dataclass
class EntropyReport:
    """Series of (T, separated count, spanning count) with fitted slopes."""

    scale: float
    T: list
    separated: list
    spanning: list = None
    slope_linear: float = math.nan
    slope_log: float = math.nan
    params: dict = field(default_factory=dict)

    def fit(self) -> "EntropyReport":
        self.slope_linear, self.slope_log = entropy_estimate(self.T, self.separated)
        return self

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "T": list(map(float, self.T)),
            "separated": [int(v) for v in self.separated],
            "spanning": None if self.spanning is None else [int(v) for v in self.spanning],
            "slope_linear": self.slope_linear,
            "slope_log": self.slope_log,
            "params": self.params,
        }


def entropy_series(points, m: MetricField, eps: float, T_list, grid: Grid, with_spanning: bool = True, **kw) -> EntropyReport:
    """Separated (and spanning) cardinalities of a fixed point set for each T."""
    sep, span = [], []
    for T in T_list:
        oracle = DbarOracle(m, points, T, grid, **kw)
        sep.append(len(separated_set(points, m, T, eps, grid, oracle=oracle)))
        if with_spanning:
            span.append(len(spanning_set(points, m, T, eps, grid, oracle=oracle)))
    rep = EntropyReport(eps, list(T_list), sep, span if with_spanning else None,
                        params={"metric": m.digest, "population": len(points)})
    if len(T_list) >= 4:
        rep.fit()
    return rep
