"""Riemannian distance on the universal cover.

Long queries are seeded by a fast-marching solve on a band aligned with
the chord; the discrete steepest-descent path of that field is then
refined by batched Newton curve shortening together with the straight
chord.  The reported distance is the shortest refined polyline.
"""

from __future__ import annotations

import math

import numpy as np
import skfmm

from ..errors import PreconditionError
from .grid import Grid, point_field
from .metric import MetricField, equivalence_constant
from .polyline import curve_length, shorten_batch

SPACING = 0.05
MIN_SEGMENTS = 8
BAND_MAX = 3.0

_NEIGHBOURS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)], dtype=int
)


def short_range(m: MetricField) -> float:
    """g-length below which the straight chord seeds the unique minimiser.

    Chosen so that a geodesic digon of that size would enclose total
    curvature well below 2 pi.
    """
    if m.is_flat:
        return math.inf
    k = m.curvature_bound
    return min(1.0, 0.5 / math.sqrt(k)) if k > 0 else 1.0


def chord(x, y, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - t) * np.asarray(x, float) + t * np.asarray(y, float)


def _segments_for(m: MetricField, x, y, spacing=SPACING) -> int:
    de = float(np.hypot(*(np.asarray(y, float) - np.asarray(x, float))))
    return max(MIN_SEGMENTS, int(math.ceil(de * math.exp(m.f_range[1]) / spacing)))


def _band_path(m: MetricField, grid: Grid, x, y) -> np.ndarray:
    """Steepest-descent path of a fast-marching field on a chord-aligned band."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    e = y - x
    L = float(np.hypot(*e))
    e = e / L
    nrm = np.array([-e[1], e[0]])
    A = equivalence_constant(m)
    width = 0.5 * L * math.sqrt(max(A**4 - 1.0, 0.0))
    res = 32
    while res < 256 and L * res < 64:
        res *= 2
    width = min(max(width, 4.0 / res), BAND_MAX)
    area = (L + 2 * width) * 2 * width
    while res > 8 and area * res * res > grid.max_cells // 4:
        res //= 2
    h = 1.0 / res
    width = max(width, 4 * h)
    ns = int(math.ceil((L + 2 * width) / h)) + 1
    nt = 2 * int(math.ceil(width / h)) + 1
    s = -width + h * np.arange(ns)
    t = h * (np.arange(nt) - nt // 2)
    S, T = np.meshgrid(s, t, indexing="ij")
    world = x + S[..., None] * e + T[..., None] * nrm
    rho = 1.5 * h
    phi = np.hypot(S, T) - rho
    travel = skfmm.travel_time(phi, np.exp(-m.f(world)), dx=h, order=2)
    if isinstance(travel, np.ma.MaskedArray):
        travel = travel.filled(np.inf)
    vals = np.where(np.isfinite(travel), travel, np.inf)
    vals[phi <= 0] = 0.0
    i = int(round((L + width) / h))
    j = nt // 2
    pts = [y]
    stop = int(math.ceil(rho / h)) + 1
    for _ in range(4 * (ns + nt)):
        if abs(i - round(width / h)) <= stop and abs(j - nt // 2) <= stop:
            break
        cand = _NEIGHBOURS + (i, j)
        ok = (cand[:, 0] >= 0) & (cand[:, 0] < ns) & (cand[:, 1] >= 0) & (cand[:, 1] < nt)
        cand = cand[ok]
        k = int(np.argmin(vals[cand[:, 0], cand[:, 1]]))
        ni, nj = cand[k]
        if not vals[ni, nj] < vals[i, j]:
            break
        i, j = int(ni), int(nj)
        pts.append(world[i, j])
    pts.append(x)
    return np.array(pts[::-1])


def _spread(m: MetricField, path, n: int) -> np.ndarray:
    """Redistribute a polyline to n segments of equal Euclidean length."""
    path = np.asarray(path, float)
    d = np.hypot(*np.diff(path, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(d)])
    if s[-1] == 0:
        return chord(path[0], path[-1], n)
    u = np.linspace(0, s[-1], n + 1)
    return np.column_stack([np.interp(u, s, path[:, 0]), np.interp(u, s, path[:, 1])])


def _candidates(m: MetricField, grid: Grid, x, y, init_paths=(), spacing=SPACING):
    n = _segments_for(m, x, y, spacing)
    cands = [chord(x, y, n)]
    if m.is_flat:
        return cands
    if curve_length(m, cands[0]) > short_range(m):
        cands.append(_spread(m, _band_path(m, grid, x, y), n))
    for p in init_paths:
        p = np.asarray(p, float).copy()
        p[0], p[-1] = x, y
        cands.append(_spread(m, p, n))
    return cands


def _refine(m: MetricField, grid: Grid, P, Q, init_paths=None, spacing=SPACING):
    """Best refined polyline and its length for every pair (P[i], Q[i])."""
    owners, cands, flips = [], [], []
    for i, (x, y) in enumerate(zip(P, Q)):
        flip = (y[0], y[1]) < (x[0], x[1])
        flips.append(flip)
        if flip:
            x, y = y, x
        extra = () if init_paths is None else init_paths[i]
        if flip:
            extra = [np.asarray(p, float)[::-1] for p in extra]
        if np.array_equal(x, y):
            c = [np.stack([x, y])]
        else:
            c = _candidates(m, grid, x, y, extra, spacing)
        cands.extend(c)
        owners.extend([i] * len(c))
    if m.is_flat:
        out = cands
        lengths = np.array([float(np.hypot(*(c[-1] - c[0]))) for c in cands])
    else:
        out, info = shorten_batch(m, cands)
        lengths = info.lengths
    owners = np.array(owners)
    best_len = np.full(len(P), np.inf)
    best = [None] * len(P)
    for k, i in enumerate(owners):
        if lengths[k] < best_len[i]:
            best_len[i] = lengths[k]
            best[i] = out[k][::-1] if flips[i] else out[k]
    return best, best_len


def geodesic_between(m: MetricField, x, y, grid: Grid, init_paths=(), spacing=SPACING):
    """Shortest refined polyline from x to y (first node x, last node y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grid.require(np.stack([x, y]), "endpoint")
    best, _ = _refine(m, grid, [x], [y], [list(init_paths)], spacing)
    return best[0]


def riemannian_distance(m: MetricField, x, y, grid: Grid) -> float:
    """d(x, y) on the universal cover; symmetric because queries are canonically ordered."""
    return float(pairwise_distance(m, [x], [y], grid)[0])


def pairwise_distance(m: MetricField, P, Q, grid: Grid) -> np.ndarray:
    """Distances d(P[i], Q[i]), all refined together in one batch."""
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    if len(P) != len(Q):
        raise PreconditionError("point arrays must have equal length")
    if len(P) == 0:
        return np.zeros(0)
    grid.require(np.concatenate([P, Q]), "endpoint")
    de = np.hypot(*(Q - P).T)
    if m.is_flat:
        return de
    out = np.zeros(len(P))
    idx = np.nonzero(de > 0)[0]
    if len(idx):
        _, lengths = _refine(m, grid, P[idx], Q[idx])
        out[idx] = lengths
    return out


def distance_bounds(m: MetricField, P, Q):
    """Cheap brackets lo <= d(P, Q) <= hi (hi is the chord length)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    de = np.hypot(*(Q - P).T) if P.ndim > 1 else float(np.hypot(*(Q - P)))
    if m.is_flat:
        return de, de
    fmin, fmax = m.f_range
    n = 8
    t = (np.arange(n) + 0.5) / n
    mids = P[..., None, :] + t[:, None] * (Q - P)[..., None, :]
    hi = np.exp(m.f(mids)).mean(-1) * de
    reach = hi * math.exp(-fmin)
    lip = m.lipschitz
    floor = np.maximum(m.f(P), m.f(Q)) - lip * reach
    lo = de * np.exp(np.maximum(fmin, floor))
    return lo, hi


def point_line_distance(m: MetricField, pts, base, direction, grid: Grid | None = None):
    """Riemannian distance from each point to the line ``base + s*direction``.

    Returns ``(dist, s)`` with s the line parameter of the nearest point
    found by sliding-endpoint shortening from the Euclidean foot.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    base = np.asarray(base, dtype=float)
    e = np.asarray(direction, dtype=float)
    e = e / np.hypot(*e)
    s = (pts - base) @ e
    feet = base + s[:, None] * e
    de = np.hypot(*(pts - feet).T)
    if grid is not None and len(pts):
        grid.require(pts)
    if m.is_flat or not len(pts):
        return de, s
    dist = np.zeros(len(pts))
    work = np.nonzero(de > 1e-12)[0]
    if len(work):
        paths = [chord(pts[i], feet[i], _segments_for(m, pts[i], feet[i])) for i in work]
        out, info = shorten_batch(m, paths, slide_dirs=[e] * len(work))
        dist[work] = info.lengths
        s[work] = np.array([(p[-1] - base) @ e for p in out])
    return dist, s


def domain_diameter(grid: Grid, samples: int = 8) -> float:
    """Riemannian diameter of the closed unit square.

    Fields from boundary points screen all boundary pairs; the best few
    pairs are then refined exactly.
    """
    m = grid.metric
    if m.is_flat:
        return math.sqrt(2.0)
    u = np.arange(samples) / samples
    bnd = np.concatenate(
        [
            np.column_stack([u, 0 * u]),
            np.column_stack([1 + 0 * u, u]),
            np.column_stack([1 - u, 1 + 0 * u]),
            np.column_stack([0 * u, 1 - u]),
        ]
    )
    reach = math.sqrt(2.0) * equivalence_constant(m)
    screen = []
    for i, p in enumerate(bnd):
        fld = point_field(grid, p, reach + 0.1, res=64)
        vals = fld.at(bnd)
        for j in range(i + 1, len(bnd)):
            screen.append((vals[j], i, j))
    screen.sort(reverse=True)
    top = screen[:6]
    P = bnd[[i for _, i, _ in top]]
    Q = bnd[[j for _, _, j in top]]
    return float(pairwise_distance(m, P, Q, grid).max())
