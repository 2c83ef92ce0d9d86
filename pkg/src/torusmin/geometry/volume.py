"""Riemannian areas of balls and the packing constant C_eps."""

from __future__ import annotations

import math

import numpy as np

from ..errors import PreconditionError, RegionError
from .grid import Grid, euclidean_radius, field_volume, point_field


def _check_ball(grid: Grid, x, r: float):
    if r < 0:
        raise PreconditionError("radius must be non-negative")
    reach = euclidean_radius(grid.metric, r)
    if not grid.contains(np.asarray(x, float), margin=reach):
        raise RegionError(f"ball of radius {r} leaves the sampled region")


def ball_volume(grid: Grid, x, r: float, res: int | None = None) -> float:
    """Area of B(x, r): sum of exp(2f) cell areas over nodes at distance <= r."""
    _check_ball(grid, x, r)
    if r == 0:
        return 0.0
    if grid.metric.is_flat:
        return math.pi * r * r
    return field_volume(grid, point_field(grid, x, r, res=res), r)


def ball_volumes(grid: Grid, x, radii, res: int | None = None) -> np.ndarray:
    """Areas of B(x, r) for several radii from a single distance field."""
    radii = np.asarray(radii, dtype=float)
    rmax = float(radii.max())
    _check_ball(grid, x, rmax)
    fld = point_field(grid, x, rmax, res=res)
    ii, jj = np.nonzero(np.isfinite(fld.values))
    vals = fld.values[ii, jj]
    w = np.exp(2.0 * grid.nodal_f(fld.i0 + ii, fld.j0 + jj, fld.res)) * fld.h**2
    order = np.argsort(vals)
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    idx = np.searchsorted(vals[order], radii, side="right")
    out = cum[idx]
    out[radii == 0] = 0.0
    return out


def c_epsilon(grid: Grid, eps: float, probes: int = 16) -> tuple:
    """min over a probe lattice of the unit square of vol B(y, eps/2).

    Returns ``(value, argmin)``; the infimum over the plane equals the one
    over a fundamental domain by periodicity.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    if grid.metric.is_flat:
        return math.pi * (eps / 2) ** 2, np.zeros(2)
    best, arg = math.inf, None
    for i in range(probes):
        for j in range(probes):
            y = np.array([i / probes, j / probes])
            v = ball_volume(grid, y, eps / 2)
            if v < best:
                best, arg = v, y
    return best, arg
