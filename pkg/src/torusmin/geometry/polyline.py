"""Polyline lengths and length-minimising refinement of polylines.

The refinement is a damped Newton iteration on the discrete length
``sum_i exp(f(m_i)) |x_{i+1} - x_i|`` (``m_i`` the segment midpoint).  Many
independent polylines are stacked into a single block-banded system so a
whole batch costs one banded Cholesky solve per sweep.  A per-polyline
backtracking line search makes every accepted sweep non-increasing in
length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from ..errors import PreconditionError
from .metric import MetricField

_BAND = 3  # upper bandwidth of the interleaved 2x2-block tridiagonal system
_ALPHAS = 0.5 ** np.arange(0, 14)


def segment_lengths(m: MetricField, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    d = np.diff(pts, axis=-2)
    mid = 0.5 * (pts[..., 1:, :] + pts[..., :-1, :])
    return np.exp(m.f(mid)) * np.hypot(d[..., 0], d[..., 1])


def curve_length(m: MetricField, polyline) -> float:
    """Riemannian length of a polyline, midpoint rule per segment."""
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise PreconditionError("curve_length needs at least two points")
    return float(segment_lengths(m, pts).sum())


def resample(m: MetricField, pts, spacing: float) -> np.ndarray:
    """Resample a polyline at (nearly) uniform Riemannian arc-length spacing.

    The last point is kept; the number of segments is the closest integer
    to ``length / spacing`` so the realised spacing differs from the request
    by less than one part in the segment count.
    """
    pts = np.asarray(pts, dtype=float)
    seg = segment_lengths(m, pts)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0.0:
        return pts[[0, -1]].copy()
    nseg = max(1, int(round(total / spacing)))
    targets = np.linspace(0.0, total, nseg + 1)
    keep = np.concatenate([[True], seg > 0])
    s, p = s[keep], pts[keep]
    x = np.interp(targets, s, p[:, 0])
    y = np.interp(targets, s, p[:, 1])
    return np.column_stack([x, y])


def _seglen(m: MetricField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    return np.exp(m.f(0.5 * (a + b))) * np.hypot(d[:, 0], d[:, 1])


@numba.njit(cache=True)
def _fourier(x1, x2, k, c, s):
    f = 0.0
    g1 = g2 = 0.0
    h11 = h12 = h22 = 0.0
    tp = 2.0 * math.pi
    for i in range(k.shape[0]):
        ph = tp * (k[i, 0] * x1 + k[i, 1] * x2)
        cp = math.cos(ph)
        sp = math.sin(ph)
        f += c[i] * cp + s[i] * sp
        a = tp * (-c[i] * sp + s[i] * cp)
        g1 += a * k[i, 0]
        g2 += a * k[i, 1]
        b = -tp * tp * (c[i] * cp + s[i] * sp)
        h11 += b * k[i, 0] * k[i, 0]
        h12 += b * k[i, 0] * k[i, 1]
        h22 += b * k[i, 1] * k[i, 1]
    return f, g1, g2, h11, h12, h22


@numba.njit(cache=True)
def _seg_eval(X, seg_a, seg_b, k, c, s):
    n = seg_a.shape[0]
    length = np.empty(n)
    energy = np.empty(n)
    for e in range(n):
        a = seg_a[e]
        b = seg_b[e]
        d1 = X[b, 0] - X[a, 0]
        d2 = X[b, 1] - X[a, 1]
        f = 0.0
        tp = 2.0 * math.pi
        m1 = 0.5 * (X[a, 0] + X[b, 0])
        m2 = 0.5 * (X[a, 1] + X[b, 1])
        for i in range(k.shape[0]):
            ph = tp * (k[i, 0] * m1 + k[i, 1] * m2)
            f += c[i] * math.cos(ph) + s[i] * math.sin(ph)
        sq = d1 * d1 + d2 * d2
        length[e] = math.exp(f) * math.sqrt(sq)
        energy[e] = math.exp(2.0 * f) * sq
    return length, energy


@numba.njit(cache=True)
def _clip4(H):
    vals, vecs = np.linalg.eigh(H)
    out = np.zeros((4, 4))
    for j in range(4):
        if vals[j] > 0.0:
            for r in range(4):
                for q in range(4):
                    out[r, q] += vals[j] * vecs[r, j] * vecs[q, j]
    return out


@numba.njit(cache=True)
def _add(ab, grad, var_idx, jac, na, nb, blk, diagonal, band):
    for ca in range(2):
        r = var_idx[na, ca]
        if r < 0:
            continue
        for cb in range(2):
            q = var_idx[nb, cb]
            if q < 0:
                continue
            v = 0.0
            for i in range(2):
                for j in range(2):
                    v += jac[na, i, ca] * blk[i, j] * jac[nb, j, cb]
            if diagonal:
                if r <= q:
                    ab[band + r - q, q] += v
            elif r != q:
                lo = min(r, q)
                hi = max(r, q)
                ab[band + lo - hi, hi] += v


@numba.njit(cache=True)
def _assemble_nb(X, seg_a, seg_b, seg_prob, var_idx, jac, nvar, k, c, s, energy, clip, damping, free, mu, band):
    grad = np.zeros(nvar)
    ab = np.zeros((band + 1, nvar))
    H = np.zeros((4, 4))
    haa = np.zeros((2, 2))
    hab = np.zeros((2, 2))
    hbb = np.zeros((2, 2))
    for e in range(seg_a.shape[0]):
        a = seg_a[e]
        b = seg_b[e]
        d1 = X[b, 0] - X[a, 0]
        d2 = X[b, 1] - X[a, 1]
        f, g1, g2, h11, h12, h22 = _fourier(0.5 * (X[a, 0] + X[b, 0]), 0.5 * (X[a, 1] + X[b, 1]), k, c, s)
        g = (g1, g2)
        hf = ((h11, h12), (h12, h22))
        dv = (d1, d2)
        if energy:
            w = math.exp(2.0 * f)
            sq = d1 * d1 + d2 * d2
            gw = (2.0 * w * g1, 2.0 * w * g2)
            ga = (0.5 * gw[0] * sq - 2.0 * w * d1, 0.5 * gw[1] * sq - 2.0 * w * d2)
            gb = (0.5 * gw[0] * sq + 2.0 * w * d1, 0.5 * gw[1] * sq + 2.0 * w * d2)
            for i in range(2):
                for j in range(2):
                    hw = w * (2.0 * hf[i][j] + 4.0 * g[i] * g[j])
                    base = 0.25 * hw * sq
                    q = gw[i] * dv[j]
                    qt = gw[j] * dv[i]
                    st = 2.0 * w if i == j else 0.0
                    haa[i, j] = base - q - qt + st
                    hab[i, j] = base + q - qt - st
                    hbb[i, j] = base + q + qt + st
        else:
            n = max(math.sqrt(d1 * d1 + d2 * d2), 1e-14)
            u = (d1 / n, d2 / n)
            w = math.exp(f)
            gw = (w * g1, w * g2)
            ga = (0.5 * gw[0] * n - w * u[0], 0.5 * gw[1] * n - w * u[1])
            gb = (0.5 * gw[0] * n + w * u[0], 0.5 * gw[1] * n + w * u[1])
            for i in range(2):
                for j in range(2):
                    hw = w * (hf[i][j] + g[i] * g[j])
                    base = 0.25 * hw * n
                    eye = 1.0 if i == j else 0.0
                    st = (w / n) * (eye - u[i] * u[j])
                    q = gw[i] * u[j]
                    qt = gw[j] * u[i]
                    haa[i, j] = base - 0.5 * (q + qt) + st
                    hbb[i, j] = base + 0.5 * (q + qt) + st
                    hab[i, j] = base + 0.5 * (q - qt) - st
        if clip[seg_prob[e]]:
            for i in range(2):
                for j in range(2):
                    H[i, j] = haa[i, j]
                    H[i, 2 + j] = hab[i, j]
                    H[2 + j, i] = hab[i, j]
                    H[2 + i, 2 + j] = hbb[i, j]
            C = _clip4(H)
            for i in range(2):
                for j in range(2):
                    haa[i, j] = C[i, j]
                    hab[i, j] = C[i, 2 + j]
                    hbb[i, j] = C[2 + i, 2 + j]
        for node, gv in ((a, ga), (b, gb)):
            for col in range(2):
                r = var_idx[node, col]
                if r >= 0:
                    grad[r] += jac[node, 0, col] * gv[0] + jac[node, 1, col] * gv[1]
        _add(ab, grad, var_idx, jac, a, a, haa, True, band)
        _add(ab, grad, var_idx, jac, b, b, hbb, True, band)
        _add(ab, grad, var_idx, jac, a, b, hab, False, band)
    if not energy and damping > 0.0:
        blk = np.zeros((2, 2))
        for idx in range(free.shape[0]):
            i = free[idx]
            t1 = X[i + 1, 0] - X[i - 1, 0]
            t2 = X[i + 1, 1] - X[i - 1, 1]
            tn = max(math.sqrt(t1 * t1 + t2 * t2), 1e-14)
            t1 /= tn
            t2 /= tn
            f, g1, g2, h11, h12, h22 = _fourier(X[i, 0], X[i, 1], k, c, s)
            st = damping * math.exp(f) / (0.5 * tn)
            blk[0, 0] = st * t1 * t1
            blk[0, 1] = st * t1 * t2
            blk[1, 0] = st * t2 * t1
            blk[1, 1] = st * t2 * t2
            _add(ab, grad, var_idx, jac, i, i, blk, True, band)
    scale = 1e-12
    for j in range(nvar):
        scale = max(scale, abs(ab[band, j]))
    for j in range(nvar):
        ab[band, j] += mu * scale
    return grad, ab


@dataclass
class _Layout:
    """Index bookkeeping for a stacked batch of polylines."""

    nodes: np.ndarray  # (M, 2) stacked node coordinates
    seg_a: np.ndarray  # global node index of segment start
    seg_b: np.ndarray
    seg_prob: np.ndarray  # owning polyline of each segment
    var_idx: np.ndarray  # (M, 2) unknown index per node column, -1 if fixed
    jac: np.ndarray  # (M, 2, 2) node displacement per unknown column
    n_var: int
    n_prob: int
    node_prob: np.ndarray
    free_interior: np.ndarray  # nodes with two unknowns (tangential damping)
    var_start: np.ndarray  # (n_prob + 1,) unknowns of polyline p are var_start[p]:var_start[p+1]


def _layout(paths, slide_dirs) -> _Layout:
    nodes, seg_a, seg_b, seg_prob, node_prob = [], [], [], [], []
    var_idx, jac, free = [], [], []
    offset = 0
    nvar = 0
    starts = [0]
    for p, pts in enumerate(paths):
        k = len(pts)
        nodes.append(pts)
        idx = np.arange(offset, offset + k)
        seg_a.append(idx[:-1])
        seg_b.append(idx[1:])
        seg_prob.append(np.full(k - 1, p))
        node_prob.append(np.full(k, p))
        vi = -np.ones((k, 2), dtype=np.int64)
        jj = np.zeros((k, 2, 2))
        interior = np.arange(1, k - 1)
        vi[interior, 0] = nvar + 2 * (interior - 1)
        vi[interior, 1] = nvar + 2 * (interior - 1) + 1
        jj[interior, 0, 0] = 1.0
        jj[interior, 1, 1] = 1.0
        nvar += 2 * len(interior)
        e = slide_dirs[p]
        if e is not None:
            vi[k - 1, 0] = nvar
            jj[k - 1, :, 0] = e
            nvar += 1
        free.append(offset + interior)
        starts.append(nvar)
        var_idx.append(vi)
        jac.append(jj)
        offset += k
    return _Layout(
        nodes=np.concatenate(nodes),
        seg_a=np.concatenate(seg_a),
        seg_b=np.concatenate(seg_b),
        seg_prob=np.concatenate(seg_prob),
        var_idx=np.concatenate(var_idx),
        jac=np.concatenate(jac),
        n_var=nvar,
        n_prob=len(paths),
        node_prob=np.concatenate(node_prob),
        free_interior=np.concatenate(free),
        var_start=np.array(starts),
    )


def _assemble(m, lay, X, psd, damping, mu, energy):
    """Gradient and upper banded Hessian; ``psd`` is a per-polyline mask of systems to clip."""
    clip = np.zeros(lay.n_prob, dtype=np.bool_) if psd is None else psd
    a = m._arrays
    return _assemble_nb(
        X, lay.seg_a, lay.seg_b, lay.seg_prob, lay.var_idx, lay.jac, lay.n_var,
        a["k"], a["c"], a["s"], energy, clip, damping, lay.free_interior, mu, _BAND,
    )


def _totals(m, lay, X):
    """Per-polyline (length, energy)."""
    a = m._arrays
    seg_len, seg_en = _seg_eval(X, lay.seg_a, lay.seg_b, a["k"], a["c"], a["s"])
    return (np.bincount(lay.seg_prob, seg_len, lay.n_prob),
            np.bincount(lay.seg_prob, seg_en, lay.n_prob))


def _displacement(lay, step):
    disp = np.zeros_like(lay.nodes)
    for c in range(2):
        idx = lay.var_idx[:, c]
        ok = idx >= 0
        disp[ok] += lay.jac[ok, :, c] * step[idx[ok]][:, None]
    return disp


@dataclass
class ShortenInfo:
    sweeps: int
    converged: np.ndarray
    initial_lengths: np.ndarray
    lengths: np.ndarray


def _solve(m, lay, X, todo, damping, energy):
    """Newton step per polyline; indefinite systems fall back to eigen-clipped blocks."""
    step = np.zeros(lay.n_var)
    grad, ab = _assemble(m, lay, X, None, damping, 1e-10, energy)
    failed = []
    for p in np.nonzero(todo)[0]:
        v0, v1 = lay.var_start[p], lay.var_start[p + 1]
        if v1 == v0:
            continue
        try:
            step[v0:v1] = solveh_banded(ab[:, v0:v1], -grad[v0:v1], lower=False, check_finite=False)
        except LinAlgError:
            failed.append(p)
    if failed:
        mask = np.zeros(lay.n_prob, dtype=bool)
        mask[failed] = True
        grad, ab = _assemble(m, lay, X, mask, damping, 1e-8, energy)
        for p in failed:
            v0, v1 = lay.var_start[p], lay.var_start[p + 1]
            try:
                step[v0:v1] = solveh_banded(ab[:, v0:v1], -grad[v0:v1], lower=False, check_finite=False)
            except LinAlgError:
                step[v0:v1] = 0.0
    return step


def shorten_batch(
    m: MetricField,
    paths,
    slide_dirs=None,
    tol: float = 1e-9,
    max_sweeps: int = 200,
    damping: float = 0.01,
    polish: bool = False,
):
    """Minimise the length of each polyline with fixed endpoints.

    Each sweep is a Newton step on the discrete energy (a geodesic with
    nodes equally spaced in g-length is its critical point), accepted only
    if it lowers the energy without raising the length.  ``polish`` adds a
    Newton step on the length itself when the energy step fails.

    ``slide_dirs[p]``, when given, is a unit vector: the last node of
    polyline ``p`` may then slide along the line through its initial
    position in that direction (point-to-line problems).

    Returns the refined polylines and a :class:`ShortenInfo`.
    """
    paths = [np.array(p, dtype=float) for p in paths]
    if slide_dirs is None:
        slide_dirs = [None] * len(paths)
    for p in paths:
        if len(p) < 2:
            raise PreconditionError("polylines need at least two nodes")
    dirs = [None if e is None else np.asarray(e, float) for e in slide_dirs]
    nprob = len(paths)
    current = [p.copy() for p in paths]
    lengths = np.array([float(_seglen(m, p[:-1], p[1:]).sum()) for p in paths])
    initial = lengths.copy()
    active = np.ones(nprob, dtype=bool)
    sweeps = 0
    ids = np.arange(nprob)  # problems in the current layout
    lay = None
    while active.any() and sweeps < max_sweeps:
        if lay is None or active[ids].sum() < 0.5 * len(ids):
            # compact the batch to the problems still moving
            ids = np.nonzero(active)[0]
            lay = _layout([current[i] for i in ids], [dirs[i] for i in ids])
            if lay.n_var == 0:
                break
            X = lay.nodes.copy()
            sub_len = lengths[ids].copy()
            sub_en = _totals(m, lay, X)[1]
            sub_active = np.ones(len(ids), dtype=bool)
        sweeps += 1
        old_len, old_en = sub_len.copy(), sub_en.copy()
        moved = np.zeros(len(ids), dtype=bool)
        for energy in (True, False) if polish else (True,):
            todo = sub_active & ~moved
            if not todo.any():
                break
            disp = _displacement(lay, _solve(m, lay, X, todo, damping, energy))
            disp[~todo[lay.node_prob]] = 0.0
            chosen = np.zeros(len(ids))
            for alpha in _ALPHAS:
                pending = todo & (chosen == 0.0)
                if not pending.any():
                    break
                trial = X + alpha * disp
                cand_len, cand_en = _totals(m, lay, trial)
                if energy:
                    ok = pending & (cand_len <= sub_len) & (cand_en < sub_en)
                else:
                    ok = pending & (cand_len < sub_len)
                chosen[ok] = alpha
                sub_len = np.where(ok, cand_len, sub_len)
                sub_en = np.where(ok, cand_en, sub_en)
            X = X + chosen[lay.node_prob][:, None] * disp
            moved |= chosen > 0.0
        gain_len = old_len - sub_len
        gain_en = (old_en - sub_en) / np.maximum(old_en, 1e-300)
        sub_active &= moved & ((gain_len > tol * np.maximum(1.0, sub_len)) | (gain_en > tol))
        lengths[ids] = sub_len
        active[ids] = sub_active
        start = 0
        for k, i in enumerate(ids):
            n = len(current[i])
            current[i] = X[start : start + n].copy()
            start += n
    return current, ShortenInfo(sweeps, ~active, initial, lengths)
