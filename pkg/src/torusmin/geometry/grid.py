"""Sampling grids and fast-marching distance fields on the plane.

Distance fields solve the eikonal equation |grad u| = exp(f) with
second-order fast marching (scikit-fmm).  Large windows are solved on a
coarser power-of-two subdivision of the grid resolution so that a field
never exceeds ``Grid.max_cells`` nodes; every field records the resolution
it actually used and the matching error budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import skfmm
from scipy.ndimage import map_coordinates

from ..errors import PreconditionError, RegionError
from .metric import MetricField

MIN_RESOLUTION = 64


@dataclass(frozen=True, eq=False)
class Grid:
    """Per-unit-cell sampling of a metric over the square [-halfwidth, halfwidth]^2.

    f and grad f are cached on one periodic cell, which covers the whole
    plane because f is Z^2-periodic.
    """

    metric: MetricField
    resolution: int = 256
    halfwidth: float = 40.0
    max_cells: int = 2_000_000
    f_cell: np.ndarray = field(init=False, repr=False)
    grad_cell: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < MIN_RESOLUTION:
            raise PreconditionError(f"grid resolution must be an integer >= {MIN_RESOLUTION}")
        if self.halfwidth <= 0:
            raise PreconditionError("grid halfwidth must be positive")
        n = int(self.resolution)
        xs = np.arange(n) / n
        pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
        object.__setattr__(self, "f_cell", self.metric.f(pts))
        object.__setattr__(self, "grad_cell", self.metric.grad(pts))

    @property
    def cell_diagonal(self) -> float:
        return math.sqrt(2.0) / self.resolution

    @property
    def distance_tolerance(self) -> float:
        """Error budget quoted with distances: two cell diagonals in g-length."""
        return 2.0 * self.cell_diagonal * math.exp(self.metric.f_range[1])

    @property
    def tol_min(self) -> float:
        """Tolerance for minimality certificates."""
        return 3.0 * self.cell_diagonal * math.exp(self.metric.f_range[1])

    def contains(self, pts, margin: float = 0.0) -> bool:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return bool(np.all(np.abs(pts) <= self.halfwidth - margin + 1e-12))

    def require(self, pts, what: str = "point") -> None:
        if not self.contains(pts):
            raise RegionError(f"{what} outside the sampled region |x| <= {self.halfwidth}")

    def nodal_f(self, i, j, res: int) -> np.ndarray:
        """f at lattice nodes (i/res, j/res); exact cache lookup when res divides n."""
        n = self.resolution
        if n % res == 0:
            k = n // res
            return self.f_cell[(np.asarray(i) * k) % n, (np.asarray(j) * k) % n]
        pts = np.stack(np.broadcast_arrays(np.asarray(i) / res, np.asarray(j) / res), axis=-1)
        return self.metric.f(pts)

    def field_resolution(self, area: float, finest: int | None = None) -> int:
        """Finest power-of-two divisor of the resolution keeping a window under budget."""
        res = int(finest or self.resolution)
        while res > 8 and area * res * res > self.max_cells:
            res //= 2
        return res


@dataclass
class Field:
    """Distance values on an axis-aligned lattice window.

    Node (i, j) sits at ``(i0 + i, j0 + j) / res``; unreached nodes hold inf.
    """

    i0: int
    j0: int
    res: int
    values: np.ndarray
    tolerance: float

    @property
    def h(self) -> float:
        return 1.0 / self.res

    def coords(self) -> np.ndarray:
        ni, nj = self.values.shape
        xs = (self.i0 + np.arange(ni)) / self.res
        ys = (self.j0 + np.arange(nj)) / self.res
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    def at(self, pts) -> np.ndarray:
        """Bilinear interpolation; inf outside the window or next to unreached nodes."""
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        fi = flat[:, 0] * self.res - self.i0
        fj = flat[:, 1] * self.res - self.j0
        ni, nj = self.values.shape
        inside = (fi >= 0) & (fi <= ni - 1) & (fj >= 0) & (fj <= nj - 1)
        vals = np.where(np.isfinite(self.values), self.values, 1e300)
        out = map_coordinates(vals, [np.clip(fi, 0, ni - 1), np.clip(fj, 0, nj - 1)], order=1)
        out = np.where(inside & (out < 1e299), out, np.inf)
        return out.reshape(pts.shape[:-1])


def _window(lo, hi, res):
    i0 = int(math.floor(lo[0] * res)) - 1
    j0 = int(math.floor(lo[1] * res)) - 1
    i1 = int(math.ceil(hi[0] * res)) + 1
    j1 = int(math.ceil(hi[1] * res)) + 1
    return i0, j0, i1 - i0 + 1, j1 - j0 + 1


def _march(grid: Grid, phi: np.ndarray, i0, j0, res, narrow: float) -> np.ndarray:
    ii = (i0 + np.arange(phi.shape[0]))[:, None]
    jj = (j0 + np.arange(phi.shape[1]))[None, :]
    speed = np.exp(-grid.nodal_f(ii, jj, res))
    travel = skfmm.travel_time(phi, speed, dx=1.0 / res, order=2, narrow=narrow)
    if isinstance(travel, np.ma.MaskedArray):
        travel = travel.filled(np.inf)
    return np.asarray(travel, dtype=float)


def euclidean_radius(m: MetricField, r: float) -> float:
    """Euclidean radius containing every Riemannian ball of radius r."""
    return r * math.exp(-m.f_range[0])


def point_field(grid: Grid, x, radius: float, res: int | None = None) -> Field:
    """Distance from the point x, valid up to ``radius``."""
    x = np.asarray(x, dtype=float)
    m = grid.metric
    reach = euclidean_radius(m, radius)
    if res is None:
        res = grid.field_resolution((2 * reach + 0.1) ** 2)
    h = 1.0 / res
    i0, j0, ni, nj = _window(x - reach - 2 * h, x + reach + 2 * h, res)
    fld = Field(i0, j0, res, np.empty((ni, nj)), 2.0 * math.sqrt(2) * h * math.exp(m.f_range[1]))
    pts = fld.coords()
    de = np.hypot(pts[..., 0] - x[0], pts[..., 1] - x[1])
    if m.is_flat:
        fld.values = np.where(de <= radius + 2 * h, de, np.inf)
        fld.tolerance = 0.0
        return fld
    rho = 1.5 * h
    w0 = math.exp(float(m.f(x)))
    travel = _march(grid, de - rho, i0, j0, res, narrow=radius + 4 * h)
    vals = travel + rho * w0
    inner = de < rho
    vals[inner] = de[inner] * w0
    fld.values = vals
    return fld


def square_distance_euclid(pts, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    dx = np.maximum(np.maximum(lo[0] - pts[..., 0], pts[..., 0] - hi[0]), 0.0)
    dy = np.maximum(np.maximum(lo[1] - pts[..., 1], pts[..., 1] - hi[1]), 0.0)
    return np.hypot(dx, dy)


def _square_signed(pts, lo, hi):
    out = square_distance_euclid(pts, lo, hi)
    inside = (
        (pts[..., 0] >= lo[0]) & (pts[..., 0] <= hi[0]) & (pts[..., 1] >= lo[1]) & (pts[..., 1] <= hi[1])
    )
    depth = np.minimum.reduce(
        [pts[..., 0] - lo[0], hi[0] - pts[..., 0], pts[..., 1] - lo[1], hi[1] - pts[..., 1]]
    )
    return np.where(inside, -depth, out)


def square_field(grid: Grid, radius: float, res: int | None = None) -> Field:
    """Distance to the closed unit square, valid up to ``radius``."""
    m = grid.metric
    reach = euclidean_radius(m, radius)
    side = 1 + 2 * reach
    if res is None:
        res = grid.field_resolution(side * side)
    h = 1.0 / res
    lo = np.array([-reach - 2 * h, -reach - 2 * h])
    i0, j0, ni, nj = _window(lo, lo + side + 4 * h, res)
    fld = Field(i0, j0, res, np.empty((ni, nj)), 2.0 * math.sqrt(2) * h * math.exp(m.f_range[1]))
    pts = fld.coords()
    if m.is_flat:
        fld.values = square_distance_euclid(pts)
        fld.tolerance = 0.0
        return fld
    phi = _square_signed(pts, (0.0, 0.0), (1.0, 1.0))
    vals = _march(grid, phi, i0, j0, res, narrow=radius + 4 * h)
    vals[phi <= 0] = 0.0
    fld.values = vals
    return fld


@numba.njit(cache=True)
def _seg_min(flat, a, d, dd):
    out = np.empty(flat.shape[0])
    for i in range(flat.shape[0]):
        px = flat[i, 0]
        py = flat[i, 1]
        best = np.inf
        for k in range(a.shape[0]):
            rx = px - a[k, 0]
            ry = py - a[k, 1]
            t = (rx * d[k, 0] + ry * d[k, 1]) / dd[k]
            t = min(1.0, max(0.0, t))
            ex = rx - t * d[k, 0]
            ey = ry - t * d[k, 1]
            e = ex * ex + ey * ey
            if e < best:
                best = e
        out[i] = math.sqrt(best)
    return out


def polyline_distance_euclid(pts, poly):
    """Euclidean distance from each point to the image of a polyline."""
    pts = np.asarray(pts, dtype=float)
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 1:
        return np.hypot(pts[..., 0] - poly[0, 0], pts[..., 1] - poly[0, 1])
    flat = np.ascontiguousarray(pts.reshape(-1, 2))
    a = np.ascontiguousarray(poly[:-1])
    d = np.ascontiguousarray(poly[1:] - poly[:-1])
    dd = np.maximum((d**2).sum(1), 1e-300)
    return _seg_min(flat, a, d, dd).reshape(pts.shape[:-1])


def polyline_field(grid: Grid, poly, radius: float, res: int | None = None) -> Field:
    """Distance to the image of a polyline, valid up to ``radius``."""
    poly = np.asarray(poly, dtype=float)
    m = grid.metric
    reach = euclidean_radius(m, radius)
    lo = poly.min(0) - reach
    hi = poly.max(0) + reach
    if res is None:
        res = grid.field_resolution(float(np.prod(hi - lo + 0.1)))
    h = 1.0 / res
    i0, j0, ni, nj = _window(lo - 2 * h, hi + 2 * h, res)
    fld = Field(i0, j0, res, np.empty((ni, nj)), 2.0 * math.sqrt(2) * h * math.exp(m.f_range[1]))
    pts = fld.coords()
    de = polyline_distance_euclid(pts, poly)
    if m.is_flat:
        fld.values = np.where(de <= radius + 2 * h, de, np.inf)
        fld.tolerance = 0.0
        return fld
    rho = 1.5 * h
    vals = _march(grid, de - rho, i0, j0, res, narrow=radius + 4 * h)
    w = np.exp(m.f(pts))
    vals = vals + rho * w
    inner = de < rho
    vals[inner] = de[inner] * w[inner]
    fld.values = vals
    return fld


def field_volume(grid: Grid, fld: Field, r: float) -> float:
    """Riemannian area of the sublevel set {distance <= r} by nodal cell sums."""
    mask = fld.values <= r
    if not mask.any():
        return 0.0
    ii, jj = np.nonzero(mask)
    f = grid.nodal_f(fld.i0 + ii, fld.j0 + jj, fld.res)
    return float(np.exp(2.0 * f).sum() * fld.h * fld.h)
