"""mu-tubes around a minimal geodesic, separated counts inside them, and the
constants C1, C2(delta) of the linear growth bound.

A tube population is sampled from minimal geodesics of lines parallel to the
centre's line, a couple of slightly rotated lines, and time shifts of all of
them.  Exact tubes need all times; here membership is decided on |t| <= T_max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import HorizonError, PreconditionError
from ..flow import GeodesicPath, sample_times, sup_distance, sup_exceeds
from ..geometry.distance import riemannian_distance
from ..geometry.grid import Grid, field_volume, polyline_field
from ..geometry.metric import MetricField
from ..minimal import (
    Line,
    MinimalRecord,
    accompanying_line,
    crossing_count,
    minimal_geodesic_for_line,
    minimizing_segment,
    same_image,
)
from .bowen import DbarOracle, EntropyReport, entropy_estimate, greedy_separated

DEFAULT_T_MAX = 60.0
SLOPE_TOL = 0.05
SLOPE_LOG_TOL = 1.3
MIN_POPULATION = 10


@dataclass
class TubeMember:
    path: GeodesicPath
    label: dict
    angle: float  # between accompanying lines, radians
    context: tuple = field(default=None, repr=False, compare=False)  # (metric, centre samples, times, grid)

    @cached_property
    def sup(self) -> float:
        """Sampled sup of d(c_v(t), c_w(t)) over |t| <= T_max, computed on first use."""
        m, base, ts, grid = self.context
        return sup_distance(m, base, self.path.at(ts), grid)


@dataclass
class TubeReport:
    center: GeodesicPath
    mu: float
    T_max: float
    members: list
    rejected: list
    direction_window: float
    series: EntropyReport | None = None
    C1: float = math.nan
    C2: float = math.nan
    volumes: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    same_image_count: int = 0
    triangles: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    leaves: list = field(default_factory=list, repr=False)

    @property
    def counts(self) -> list:
        return [] if self.series is None else list(self.series.separated)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "T_max": self.T_max,
            "center": {"x": self.center.at(0.0).tolist(), "theta": float(self.center.phase(0.0).theta)},
            "members": [dict(mb.label, angle=mb.angle) for mb in self.members],
            "rejected": len(self.rejected),
            "direction_window": self.direction_window,
            "series": None if self.series is None else self.series.to_dict(),
            "C1": self.C1,
            "C2": self.C2,
            "volumes": self.volumes,
            "bounds": self.bounds,
            "same_image_count": self.same_image_count,
            "triangle_count": len(self.triangles),
            "flags": self.flags,
        }


def _angle_between(l1: Line, l2: Line) -> float:
    c = abs(float(np.dot(l1.e, l2.e)))
    return math.acos(min(1.0, c))


def tube_members(m: MetricField, center: GeodesicPath, candidates, mu: float, T_max: float, grid: Grid) -> TubeReport:
    """Keep candidates whose sampled sup over |t| <= T_max of d(c_v(t), c_w(t)) is at most mu.

    ``candidates`` is a sequence of paths or ``(path, label)`` pairs.
    """
    if mu <= 0:
        raise PreconditionError("mu must be positive")
    ts = sample_times(T_max, t0=-T_max)
    base = center.at(ts)
    center_line = accompanying_line(center, min_span=0)
    members, rejected = [], []
    for k, cand in enumerate(candidates):
        path, label = cand if isinstance(cand, tuple) else (cand, {})
        label = dict(label, index=k)
        lo, hi = path.span
        if lo > -T_max + 1e-9 or hi < T_max - 1e-9:
            raise HorizonError(f"candidate {k} does not cover [-{T_max}, {T_max}]")
        other = path.at(ts)
        if sup_exceeds(m, base, other, grid, mu):
            rejected.append(label)
            continue
        angle = _angle_between(center_line, accompanying_line(path, min_span=0))
        members.append(TubeMember(path, label, angle, (m, base, ts, grid)))
    window = math.atan(2 * mu / T_max)
    return TubeReport(center, mu, T_max, members, rejected, window)


def tube_population(
    m: MetricField,
    line: Line,
    grid: Grid,
    mu: float,
    delta: float,
    T_max: float,
    offsets=None,
    turns=None,
    max_shift: float = 1.0,
):
    """Candidate paths around the minimal geodesic of ``line``.

    Returns ``(center, candidates, records)``: the centre path, the list of
    ``(path, label)`` candidates and the underlying minimal records.
    """
    if offsets is None:
        w = min(mu / 8, 0.5)
        offsets = (-2 * w, -w, 0.0, w, 2 * w)
    if turns is None:
        psi = 0.25 * math.atan(2 * mu / T_max)
        turns = (-psi, psi)
    step = 0.75 * delta  # keeps shift differences off the threshold delta
    k = int(math.floor(max_shift / step + 1e-9))
    shifts = step * np.arange(-k, k + 1)
    R = 2.0 * ((T_max + max_shift + 1) * math.exp(-m.f_range[0]) + 1.0)
    angle0 = math.atan2(line.direction[1], line.direction[0])
    specs = [(float(o), 0.0) for o in offsets] + [(0.0, float(a)) for a in turns]
    records, candidates, center = [], [], None
    for o, a in specs:
        base = np.array(line.base) + o * line.normal
        rec = minimal_geodesic_for_line(m, Line.from_angle(base, angle0 + a), R, grid)
        rec.flags["offset"], rec.flags["turn"] = o, a
        records.append(rec)
        if o == 0.0 and a == 0.0:
            center = rec.path
        for s in shifts:
            candidates.append((rec.path.shifted(float(s)), {"offset": o, "turn": a, "shift": float(s),
                                                            "certified": rec.certified}))
    if center is None:
        raise PreconditionError("offsets must include 0 so the centre is part of the population")
    return center, candidates, records


# --- areas ---------------------------------------------------------------


def _green_area(m: MetricField, poly: np.ndarray, per_edge: int = 3) -> float:
    """Riemannian area enclosed by a closed polygon via the line integral of P dy,
    P(x, y) = int_{x_ref}^{x} exp(2 f(s, y)) ds."""
    poly = np.asarray(poly, float)
    if np.any(poly[0] != poly[-1]):
        poly = np.vstack([poly, poly[:1]])
    a, b = poly[:-1], poly[1:]
    u, wu = np.polynomial.legendre.leggauss(per_edge)
    u = 0.5 * (u + 1)
    wu = 0.5 * wu
    q = a[:, None, :] + u[None, :, None] * (b - a)[:, None, :]
    q = q.reshape(-1, 2)
    dy = np.repeat(b[:, 1] - a[:, 1], per_edge) * np.tile(wu, len(a))
    xref = float(poly[:, 0].mean())
    span = float(np.abs(poly[:, 0] - xref).max())
    nodes = 16 * int(math.ceil(span * 4 + 1))
    s, ws = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (s + 1)
    ws = 0.5 * ws
    xs = xref + s[None, :] * (q[:, 0:1] - xref)
    pts = np.stack([xs, np.broadcast_to(q[:, 1:2], xs.shape)], axis=-1)
    P = (np.exp(2 * m.f(pts)) * ws).sum(1) * (q[:, 0] - xref)
    return abs(float((P * dy).sum()))


@dataclass
class Triangle:
    vertices: np.ndarray
    area: float
    sides: tuple
    sides_ok: bool
    t0: float
    delta: float

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "area": self.area, "sides": list(self.sides),
                "sides_ok": self.sides_ok, "t0": self.t0, "delta": self.delta}


def min_delta_triangle(m: MetricField, path1, path2, t0: float, delta: float, grid: Grid, mu: float | None = None) -> Triangle:
    """Triangle c1(t0), c2(t0 - delta/2), c2(t0 + delta/2) with minimising sides.

    The side check is delta/2 < l <= 2 mu + delta/2 when mu is given.
    """
    if delta <= 0:
        raise PreconditionError("delta must be positive")
    p = path1.at(t0)
    q0 = path2.at(t0 - delta / 2)
    q1 = path2.at(t0 + delta / 2)
    if riemannian_distance(m, p, path2.at(t0), grid) < delta:
        raise PreconditionError("d(c1(t0), c2(t0)) must be at least delta")
    sides = [minimizing_segment(m, p, q0, grid), minimizing_segment(m, q0, q1, grid),
             minimizing_segment(m, q1, p, grid)]
    lengths = tuple(float(s.t[-1] - s.t[0]) for s in sides)
    poly = np.vstack([sides[0].x, sides[1].x[1:], sides[2].x[1:]])
    area = _green_area(m, poly)
    ok = all(l > delta / 2 for l in lengths)
    if mu is not None:
        ok = ok and all(l <= 2 * mu + delta / 2 + 1e-9 for l in lengths)
    return Triangle(np.array([p, q0, q1]), area, lengths, ok, float(t0), float(delta))


def triangle_family(m: MetricField, paths, delta: float, grid: Grid, count: int, t0s, mu: float | None = None) -> list:
    """min-delta-triangles over distinct-image, non-crossing path pairs, cycling through t0s."""
    pairs = []
    for i in range(len(paths)):
        for j in range(len(paths)):
            if i != j and not same_image(paths[i], paths[j]) and crossing_count(paths[i], paths[j]) == 0:
                pairs.append((i, j))
    out = []
    if not pairs:
        return out
    tries = 0
    while len(out) < count and tries < 4 * count:
        i, j = pairs[tries % len(pairs)]
        t0 = float(t0s[(tries // len(pairs)) % len(t0s)])
        tries += 1
        try:
            out.append(min_delta_triangle(m, paths[i], paths[j], t0, delta, grid, mu))
        except PreconditionError:
            continue
    return out


def neighborhood_volume(m: MetricField, path: GeodesicPath, T: float, mu: float, delta: float, grid: Grid) -> float:
    """Area of the (mu + 2 delta)-neighbourhood of c([0, T + 1])."""
    lo, hi = path.span
    if lo > 1e-9 or hi < T + 1 - 1e-9:
        raise HorizonError(f"path does not cover [0, {T + 1}]")
    poly = path.at(sample_times(T + 1))
    radius = mu + 2 * delta
    fld = polyline_field(grid, poly, radius)
    return field_volume(grid, fld, radius)


def fit_C1(T_list, volumes, mu: float, delta: float) -> float:
    """Smallest C1 with vol <= C1 mu (T + 1 + 2 mu + 4 delta) on the tested T."""
    return max(v / (mu * (T + 1 + 2 * mu + 4 * delta)) for T, v in zip(T_list, volumes))


def linear_bound(C1: float, C2: float, mu: float, delta: float, T: float) -> float:
    return C1 * mu * (T + 1 + 2 * mu + 4 * delta) / C2 * (2 * mu / delta)


def tube_entropy(
    m: MetricField,
    line: Line,
    mu: float,
    delta: float,
    T_list,
    grid: Grid,
    a: float,
    T_max: float = DEFAULT_T_MAX,
    n_triangles: int = 24,
    population: dict | None = None,
) -> TubeReport:
    """Separated counts #F(T, delta) inside S_mu(v) and the linear bound built from C1, C2(delta)."""
    if delta > min(mu, a) / 10 + 1e-12:
        raise PreconditionError("delta must not exceed min(mu, a) / 10")
    T_list = [float(T) for T in T_list]
    if max(T_list) + 1 > T_max + 1e-9:
        raise PreconditionError("T_max must cover T + 1 for every T")
    center, cands, records = tube_population(m, line, grid, mu, delta, T_max, **(population or {}))
    rep = tube_members(m, center, cands, mu, T_max, grid)
    rep.flags["small_population"] = len(rep.members) < MIN_POPULATION
    rep.flags["uncertified"] = [r.flags.get("offset") for r in records if not r.certified]
    paths = [mb.path for mb in rep.members]
    counts = []
    for T in T_list:
        oracle = DbarOracle(m, paths, T, grid)
        counts.append(len(greedy_separated(len(oracle), lambda i, j: oracle.far(i, j, delta))))
    series = EntropyReport(delta, T_list, counts, None,
                           params={"metric": m.digest, "population": len(paths), "mu": mu, "T_max": T_max})
    if len(T_list) >= 4:
        series.slope_linear, series.slope_log = entropy_estimate(T_list, counts)
    rep.series = series
    rep.volumes = [neighborhood_volume(m, center, T, mu, delta, grid) for T in T_list]
    rep.C1 = fit_C1(T_list, rep.volumes, mu, delta)
    # same-image members: the centre's own time shifts
    own = [mb.path for mb in rep.members if mb.label["offset"] == 0.0 and mb.label["turn"] == 0.0]
    oracle = DbarOracle(m, own, max(T_list), grid)
    rep.same_image_count = len(greedy_separated(len(oracle), lambda i, j: oracle.far(i, j, delta)))
    # triangles between distinct parallel leaves
    leaves = [r.path for r in records if r.flags["turn"] == 0.0]
    rep.leaves = leaves
    t0s = np.linspace(-T_max / 2, T_max / 2, 7)
    rep.triangles = triangle_family(m, leaves, delta, grid, n_triangles, t0s, mu)
    if rep.triangles:
        rep.C2 = min(t.area for t in rep.triangles)
        rep.bounds = [linear_bound(rep.C1, rep.C2, mu, delta, T) for T in T_list]
    rep.flags["bound_holds"] = bool(rep.bounds) and all(c <= b for c, b in zip(counts, rep.bounds))
    rep.flags["same_image_ok"] = rep.same_image_count <= 2 * mu / delta
    rep.flags["sides_ok"] = all(t.sides_ok for t in rep.triangles)
    rep.flags["directions_ok"] = all(mb.angle <= rep.direction_window + 1e-9 for mb in rep.members)
    return rep
