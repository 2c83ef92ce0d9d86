"""The spanning set P_r built from nets of the fundamental domain and of a shell.

F^eps is a greedy eps-net of the closed unit square, F_r^eps one of the shell
{z : r - a <= d(z, F) <= r}.  Every pair (y, z) names the minimal geodesic
accompanying the line through y and z; such members are only realised on
demand, since the count #F^eps * #F_r^eps is what the growth argument uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import HorizonError, PreconditionError
from ..flow import sample_times, sup_distance
from ..geometry.distance import pairwise_distance
from ..geometry.grid import Grid, euclidean_radius, point_field, square_distance_euclid, square_field
from ..geometry.metric import MetricField
from ..geometry.volume import ball_volume, c_epsilon
from ..minimal import MIN_SPAN, Line, MinimalRecord, minimal_geodesic_for_line
from .bowen import EntropyReport, entropy_estimate

SQUARE_LATTICE = 32  # candidate spacing for F^eps
NET_RESOLUTION = 64  # lattice of the local fields that enforce separation
SLOPE_TOL = 0.05


@dataclass(frozen=True)
class BetaConstants:
    beta: float
    B: float
    H: float

    def to_dict(self) -> dict:
        return {"beta": self.beta, "B": self.B, "H": self.H}


def beta_constant(D: float, A: float, a: float, eps: float) -> BetaConstants:
    """beta = 10 D + 2 A^2 (4D + a + 2 eps), with B = A^2 (4D + a + 2 eps) + 2D and
    H = 2 (B + 2D), so that beta = 2D + H."""
    if min(D, a, eps) < 0 or A < 1:
        raise PreconditionError("need D, a, eps >= 0 and A >= 1")
    core = A * A * (4 * D + a + 2 * eps)
    B = core + 2 * D
    H = 2 * (B + 2 * D)
    return BetaConstants(2 * D + H, B, H)


def greedy_net(grid: Grid, candidates, eps: float, res: int = NET_RESOLUTION) -> np.ndarray:
    """Scan candidates in order; keep one iff it is farther than eps from all kept ones.

    Kept points block every candidate within eps, read off a local distance
    field (exact Euclidean distances on the flat metric).
    """
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    m = grid.metric
    tree = cKDTree(cand)
    reach = euclidean_radius(m, eps) + 2.0 / res
    blocked = np.zeros(len(cand), dtype=bool)
    kept = []
    for i in range(len(cand)):
        if blocked[i]:
            continue
        kept.append(i)
        near = np.asarray(tree.query_ball_point(cand[i], reach), dtype=int)
        if m.is_flat:
            d = np.hypot(*(cand[near] - cand[i]).T)
        else:
            d = point_field(grid, cand[i], eps, res=res).at(cand[near])
        blocked[near[d <= eps]] = True
    return cand[kept]


def build_F_eps(grid: Grid, eps: float, lattice: int = SQUARE_LATTICE) -> np.ndarray:
    """Greedy eps-net of the closed unit square, scanned row by row."""
    u = np.arange(lattice + 1) / lattice
    cand = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)
    return greedy_net(grid, cand, eps)


def _shell_candidates(grid: Grid, r: float, a: float):
    """Lattice nodes with r - a <= d(., F) <= r, their distances and the lattice step."""
    m = grid.metric
    reach = euclidean_radius(m, r)
    grid.require(np.array([[-reach, -reach], [1 + reach, 1 + reach]]), "shell")
    if not m.is_flat:
        fld = square_field(grid, r)
        pts = fld.coords().reshape(-1, 2)
        vals = fld.values.ravel()
        keep = (vals >= r - a) & (vals <= r)
        return pts[keep], vals[keep], fld.h, fld.tolerance
    side = 1 + 2 * reach
    res = grid.field_resolution(side * side)
    lo = int(math.floor(-reach * res)) - 1
    hi = int(math.ceil((1 + reach) * res)) + 1
    js = np.arange(lo, hi + 1) / res
    pts, vals = [], []
    for i in range(lo, hi + 1):
        row = np.column_stack([np.full(len(js), i / res), js])
        d = square_distance_euclid(row)
        keep = (d >= r - a) & (d <= r)
        pts.append(row[keep])
        vals.append(d[keep])
    return np.concatenate(pts), np.concatenate(vals), 1.0 / res, 0.0


def build_F_r_eps(grid: Grid, r: float, eps: float, a: float):
    """Greedy eps-net of the shell around the unit square.

    Returns ``(points, shell_distances, tolerance)``; the shell membership
    of each point is read from the distance field to the square, whose
    error budget is ``tolerance``.
    """
    if r <= 2 * a:
        raise PreconditionError(f"r = {r} must exceed 2a = {2 * a:.4g}")
    pts, vals, _, tol = _shell_candidates(grid, r, a)
    net = greedy_net(grid, pts, eps)
    tree = cKDTree(pts)
    _, idx = tree.query(net)
    return net, vals[idx], tol


def _inside_square(x) -> np.ndarray:
    """Deck translation moving x into the closed unit square (zero if already there)."""
    x = np.asarray(x, float)
    shift = -np.floor(x)
    shift[(x >= 0) & (x <= 1)] = 0.0
    return shift


def horizon_span(m: MetricField, T: float) -> float:
    """Line span R whose central minimiser covers the times [-T, T]."""
    return 2.0 * (T * math.exp(-m.f_range[0]) + 1.0)


def realize_member(grid: Grid, y, z, r: float) -> MinimalRecord:
    """v_yz: minimal geodesic of the line through y and z covering the times [0, r + 1].

    When the central portion moves under span doubling (the finite minimiser
    followed another channel) the span is doubled again while the grid allows.
    """
    m = grid.metric
    l = Line.through(y, z)
    R = max(MIN_SPAN, horizon_span(m, r + 1))
    rec = minimal_geodesic_for_line(m, l, R, grid)
    while not rec.certified and grid.contains(l.point(np.array([-4 * R, 4 * R]))):
        R *= 2
        rec = minimal_geodesic_for_line(m, l, R, grid)
    return rec.translated(_inside_square(rec.path.at(0.0)))


@dataclass
class SpanningConstruction:
    """P_r indexed by pairs (i, j) of F^eps x F_r^eps; members are built lazily."""

    grid: Grid
    r: float
    eps: float
    a: float
    F: np.ndarray
    Fr: np.ndarray
    A: float
    D: float
    constants: BetaConstants
    shell_tolerance: float = 0.0
    dropped: list = field(default_factory=list)
    _members: dict = field(default_factory=dict, repr=False)

    @property
    def beta(self) -> float:
        return self.constants.beta

    @property
    def cardinality(self) -> int:
        return len(self.F) * len(self.Fr)

    def member(self, i: int, j: int) -> MinimalRecord:
        """Minimal geodesic along the line through F[i] and Fr[j], footpoint moved into the square."""
        key = (int(i), int(j))
        if key not in self._members:
            self.store(key, realize_member(self.grid, self.F[key[0]], self.Fr[key[1]], self.r))
        return self._members[key]

    def store(self, key, rec: MinimalRecord) -> None:
        key = (int(key[0]), int(key[1]))
        rec.flags["pair"] = list(key)
        if not rec.certified:
            self.dropped.append({"pair": list(key), "slack": rec.minimality_slack,
                                 "stability": rec.stability})
        self._members[key] = rec

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "eps": self.eps,
            "a": self.a,
            "A": self.A,
            "D": self.D,
            "constants": self.constants.to_dict(),
            "F_count": len(self.F),
            "Fr_count": len(self.Fr),
            "cardinality": self.cardinality,
            "shell_tolerance": self.shell_tolerance,
            "dropped": self.dropped,
        }


def build_P_r(grid: Grid, r: float, eps: float, a: float, A: float, D: float, F=None) -> SpanningConstruction:
    if F is None:
        F = build_F_eps(grid, eps)
    Fr, _, tol = build_F_r_eps(grid, r, eps, a)
    return SpanningConstruction(grid, r, eps, a, np.asarray(F), Fr, A, D, beta_constant(D, A, a, eps), tol)


@dataclass
class WitnessCheck:
    index: int
    pair: tuple
    d_start: float
    d_end: float
    dbar: float
    ratio: float
    flagged: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__, pair=list(self.pair))


def select_pair(con: SpanningConstruction, path, k_near: int = 12):
    """Indices (i, j) of the net points nearest to c_w(0) and c_w(r), with both distances."""
    grid = con.grid
    m = grid.metric
    lo, hi = path.span
    if lo > 1e-9 or hi < con.r + 1 - 1e-9:
        raise HorizonError(f"witness does not cover [0, {con.r + 1}]")
    x0 = path.at(0.0)
    xr = path.at(con.r)
    d0 = pairwise_distance(m, np.repeat(x0[None], len(con.F), 0), con.F, grid)
    i = int(np.argmin(d0))
    _, near = cKDTree(con.Fr).query(xr, k=min(k_near, len(con.Fr)))
    near = np.atleast_1d(near)
    dr = pairwise_distance(m, np.repeat(xr[None], len(near), 0), con.Fr[near], grid)
    j = int(near[int(np.argmin(dr))])
    return i, j, float(d0[i]), float(dr.min())


def verify_spanning(con: SpanningConstruction, witnesses, pairs=None) -> list:
    """For each witness pick y near c_w(0), z near c_w(r), and compare d-bar(w, v_yz)_r with beta.

    A witness is flagged when no net point lies within eps (plus the shell
    field tolerance) of c_w(0) or c_w(r).
    """
    m = con.grid.metric
    ts = sample_times(con.r + 1)
    out = []
    for n, w in enumerate(witnesses):
        path = getattr(w, "path", w)
        i, j, d0, dr = pairs[n] if pairs is not None else select_pair(con, path)
        v = con.member(i, j)
        dbar = sup_distance(m, path.at(ts), v.path.at(ts), con.grid)
        flagged = bool(d0 > con.eps + 1e-9 or dr > con.eps + con.shell_tolerance + 1e-9)
        out.append(WitnessCheck(n, (i, j), d0, dr, dbar, dbar / con.beta, flagged))
    return out


def packing_check(grid: Grid, F, count: int, r: float, a: float, eps: float, C: float) -> dict:
    """#F_r^eps * C_eps against vol B(x, r + a + eps/2) for every probe x in F^eps."""
    radius = r + a + eps / 2
    vols = np.array([ball_volume(grid, x, radius) for x in F])
    lhs = count * C
    return {
        "r": r,
        "count": int(count),
        "C_eps": C,
        "lhs": lhs,
        "volumes": vols.tolist(),
        "min_volume": float(vols.min()),
        "holds": bool(np.all(lhs <= vols)),
    }


def spanning_entropy_series(grid: Grid, eps: float, r_list, a: float, A: float, D: float,
                            C: float | None = None, F=None) -> tuple:
    """#P_r for each r together with the volume bound (1/r) log(vol / C_eps).

    Returns ``(report, constructions, packing)``; the report's ``T`` axis is r.
    """
    r_list = [float(r) for r in r_list]
    if len(r_list) < 4 or any(b <= a_ for a_, b in zip(r_list, r_list[1:])):
        raise PreconditionError("r_list must be increasing with at least 4 values")
    if C is None:
        C = c_epsilon(grid, eps)[0]
    if F is None:
        F = build_F_eps(grid, eps)
    cons, packing, counts, rates = [], [], [], []
    for r in r_list:
        con = build_P_r(grid, r, eps, a, A, D, F=F)
        pk = packing_check(grid, F, len(con.Fr), r, a, eps, C)
        cons.append(con)
        packing.append(pk)
        counts.append(con.cardinality)
        rates.append(math.log(max(pk["volumes"]) / C) / r)
    rep = EntropyReport(eps, r_list, counts, None, params={
        "metric": grid.metric.digest, "population": "P_r", "F_count": len(F), "a": a, "C_eps": C,
    })
    rep.slope_linear, rep.slope_log = entropy_estimate(r_list, counts)
    rep.params["volume_rate"] = rates
    rep.params["volume_rate_decreasing"] = bool(np.all(np.diff(rates) < 0))
    rep.params["packing_holds"] = all(p["holds"] for p in packing)
    return rep, cons, packing
