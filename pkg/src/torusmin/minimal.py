"""Minimal geodesics on the universal cover and their Aubry-Mather structure.

Global minimisers are approximated by the central portion of long
minimising segments between far points of a Euclidean line, certified by
comparing sub-segment lengths with independently computed distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InsufficientDataError, PreconditionError
from .flow import GeodesicPath, PhasePoint
from .geometry.distance import (
    geodesic_between,
    pairwise_distance,
    point_line_distance,
)
from .geometry.grid import Grid
from .geometry.grid import polyline_distance_euclid as _polyline_dist_min
from .geometry.metric import MetricField, equivalence_constant
from .geometry.polyline import curve_length, resample, shorten_batch

SPACING = 0.05
MIN_SPAN = 20.0
MAX_DENOMINATOR = 12
STABILITY_TOL = 1e-2
SAME_IMAGE_TOL = 1e-3
DYADIC_LEVELS = 3


@dataclass(frozen=True)
class Line:
    base: tuple
    direction: tuple

    def __post_init__(self):
        e = np.asarray(self.direction, dtype=float)
        n = float(np.hypot(*e))
        if n == 0:
            raise PreconditionError("line direction must be non-zero")
        object.__setattr__(self, "direction", (float(e[0] / n), float(e[1] / n)))
        object.__setattr__(self, "base", (float(self.base[0]), float(self.base[1])))

    @classmethod
    def through(cls, y, z) -> "Line":
        y = np.asarray(y, float)
        return cls(tuple(y), tuple(np.asarray(z, float) - y))

    @classmethod
    def from_angle(cls, base, angle: float) -> "Line":
        return cls(tuple(base), (math.cos(angle), math.sin(angle)))

    @property
    def e(self) -> np.ndarray:
        return np.array(self.direction)

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.array(self.base) + s[..., None] * self.e

    def param(self, x) -> np.ndarray:
        return (np.asarray(x, float) - np.array(self.base)) @ self.e

    def offset(self, x) -> np.ndarray:
        """Signed Euclidean distance (left of the direction is positive)."""
        return (np.asarray(x, float) - np.array(self.base)) @ self.normal

    def to_dict(self) -> dict:
        return {"base": list(self.base), "direction": list(self.direction)}


@dataclass(frozen=True)
class Rotation:
    value: float
    rational: tuple | None
    span: float

    @property
    def is_rational(self) -> bool:
        return self.rational is not None

    def to_dict(self) -> dict:
        return {
            "alpha": "inf" if math.isinf(self.value) else self.value,
            "rational": None if self.rational is None else list(self.rational),
            "span": self.span,
            "max_denominator": MAX_DENOMINATOR,
        }


@dataclass
class MinimalRecord:
    path: GeodesicPath
    line: Line
    rotation: Rotation
    deviation: float
    minimality_slack: float
    tolerance: float
    stability: float
    source: Line
    flags: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.minimality_slack <= self.tolerance and self.stability < STABILITY_TOL

    @property
    def phase(self) -> PhasePoint:
        return self.path.phase(0.0)

    def translated(self, shift) -> "MinimalRecord":
        shift = np.asarray(shift, float)
        return MinimalRecord(
            self.path.translated(shift),
            Line(tuple(np.array(self.line.base) + shift), self.line.direction),
            self.rotation,
            self.deviation,
            self.minimality_slack,
            self.tolerance,
            self.stability,
            Line(tuple(np.array(self.source.base) + shift), self.source.direction),
            dict(self.flags),
        )

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.to_dict(),
            "span": list(self.path.span),
            "line": self.line.to_dict(),
            "source_line": self.source.to_dict(),
            "rotation": self.rotation.to_dict(),
            "deviation": self.deviation,
            "minimality_slack": self.minimality_slack,
            "tol_min": self.tolerance,
            "stability": self.stability,
            "certified": self.certified,
        }


def as_polyline(path) -> np.ndarray:
    return path.x if isinstance(path, GeodesicPath) else np.asarray(path, dtype=float)


def path_from_polyline(m: MetricField, poly, spacing: float = SPACING, t0: float = 0.0) -> GeodesicPath:
    """Uniform arc-length resampling of a polyline into a GeodesicPath."""
    pts = resample(m, poly, spacing)
    seg = np.exp(m.f(0.5 * (pts[1:] + pts[:-1]))) * np.hypot(*np.diff(pts, axis=0).T)
    t = t0 + np.concatenate([[0.0], np.cumsum(seg)])
    # uniform by construction up to quadrature; snap to the exact grid
    t = t0 + np.linspace(0.0, t[-1] - t0, len(t))
    d = np.gradient(pts, axis=0)
    theta = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * math.pi)
    return GeodesicPath(t, pts, theta)


def shorten(m: MetricField, polyline, iterations: int = 200, tol: float = 1e-9) -> np.ndarray:
    """Length-non-increasing Newton curve shortening with fixed endpoints."""
    out, _ = shorten_batch(m, [polyline], tol=tol, max_sweeps=iterations)
    return out[0]


def minimizing_segment(m: MetricField, x, y, grid: Grid, spacing: float = SPACING, init_paths=()) -> GeodesicPath:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.array_equal(x, y):
        raise PreconditionError("minimizing_segment needs distinct endpoints")
    poly = geodesic_between(m, x, y, grid, init_paths=init_paths)
    return path_from_polyline(m, poly, spacing)


def _central(m: MetricField, poly: np.ndarray, line: Line, half: float, spacing: float) -> GeodesicPath:
    """Portion of poly whose line parameter lies in [-half, half], with t = 0 at parameter 0."""
    path = path_from_polyline(m, poly, spacing)
    s = line.param(path.x)
    if not np.all(np.diff(s) > 0):
        # the projection of a minimiser is monotone; keep the hull just in case
        s = np.maximum.accumulate(s)
    t_mid = float(np.interp(0.0, s, path.t))
    t_lo = float(np.interp(-half, s, path.t))
    t_hi = float(np.interp(half, s, path.t))
    n_lo = int(math.floor((t_mid - t_lo) / spacing + 1e-9))
    n_hi = int(math.floor((t_hi - t_mid) / spacing + 1e-9))
    ts = t_mid + spacing * np.arange(-n_lo, n_hi + 1)
    x = path.at(ts)
    th = np.interp(ts, path.t, np.unwrap(path.theta))
    return GeodesicPath(ts - t_mid, x, np.mod(th, 2 * math.pi))


def sup_gap(p1, p2) -> float:
    """Symmetric sup of Euclidean point-to-polyline distances (Hausdorff)."""
    a, b = as_polyline(p1), as_polyline(p2)
    return max(float(_polyline_dist_min(a, b).max()), float(_polyline_dist_min(b, a).max()))


def minimal_geodesic_for_line(
    m: MetricField,
    l: Line,
    R: float,
    grid: Grid,
    spacing: float = SPACING,
    certify: bool = True,
    check_stability: bool = True,
) -> MinimalRecord:
    """Central portion of the minimiser between l(-R) and l(R)."""
    if R < MIN_SPAN:
        raise PreconditionError(f"R must be at least {MIN_SPAN}")
    grid.require(l.point(np.array([-R, R])), "line segment")
    if m.is_flat:
        ts = spacing * np.arange(-int(R / 2 / spacing), int(R / 2 / spacing) + 1)
        x = l.point(ts)
        th = math.atan2(l.direction[1], l.direction[0]) % (2 * math.pi)
        path = GeodesicPath(ts, x, np.full(len(ts), th))
        return MinimalRecord(path, l, rotation_number(path, min_span=0), 0.0, 0.0, grid.tol_min, 0.0, l)
    poly = geodesic_between(m, l.point(-R), l.point(R), grid)
    path = _central(m, poly, l, R / 2, spacing)
    stability = 0.0
    if check_stability:
        if not grid.contains(l.point(np.array([-2 * R, 2 * R]))):
            stability = math.inf
        else:
            poly2 = geodesic_between(m, l.point(-2 * R), l.point(2 * R), grid)
            path2 = _central(m, poly2, l, R / 2, spacing)
            stability = sup_gap(path, path2)
    line = accompanying_line(path, min_span=0)
    slack = is_minimal(m, path, grid.tol_min, grid)[1] if certify else math.nan
    rec = MinimalRecord(path, line, rotation_number(path, min_span=0), math.nan, slack, grid.tol_min, stability, l)
    rec.deviation = deviation(m, path, line, grid)
    return rec


def dyadic_pairs(n: int, levels: int = DYADIC_LEVELS):
    """Index pairs of consecutive dyadic breakpoints at every level up to ``levels``."""
    pairs = []
    for j in range(levels + 1):
        cuts = np.unique(np.round(np.linspace(0, n - 1, 2**j + 1)).astype(int))
        pairs.extend((int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:]) if b > a)
    return pairs


def is_minimal(m: MetricField, path, tol: float, grid: Grid, levels: int = DYADIC_LEVELS):
    """Check length(sub-segment) <= d(endpoints) + tol on dyadic sub-segments."""
    poly = as_polyline(path)
    if len(poly) < 3:
        raise PreconditionError("is_minimal needs at least 3 samples")
    pairs = dyadic_pairs(len(poly), levels)
    lengths = np.array([curve_length(m, poly[a : b + 1]) for a, b in pairs])
    dists = pairwise_distance(m, poly[[a for a, _ in pairs]], poly[[b for _, b in pairs]], grid)
    slack = float(np.max(lengths - dists))
    return slack <= tol, slack


def rotation_number(path, max_denominator: int = MAX_DENOMINATOR, min_span: float = MIN_SPAN) -> Rotation:
    """Slope of the displacement with rational detection up to the given denominator."""
    if isinstance(path, GeodesicPath):
        span = path.t[-1] - path.t[0]
        x = path.x
    else:
        x = np.asarray(path, float)
        span = float(np.hypot(*np.diff(x, axis=0).T).sum())
    if span < min_span - 1e-9:
        raise InsufficientDataError(f"span {span:.3g} shorter than {min_span}")
    dx, dy = x[-1] - x[0]
    if abs(dx) < 1e-6 * abs(dy):
        return Rotation(math.inf, (1, 0), float(span))
    alpha = dy / dx
    for q in range(1, max_denominator + 1):
        p = round(alpha * q)
        if abs(alpha - p / q) < 0.5 / (q * span):
            fr = Fraction(int(p), q)
            return Rotation(float(alpha), (fr.numerator, fr.denominator), float(span))
    return Rotation(float(alpha), None, float(span))


def same_rotation(r1: Rotation, r2: Rotation) -> bool:
    if r1.rational is not None or r2.rational is not None:
        return r1.rational == r2.rational
    window = 0.5 / min(r1.span, r2.span)
    return abs(r1.value - r2.value) < window


def accompanying_line(path, min_span: float = MIN_SPAN) -> Line:
    """Total-least-squares line oriented along the path; base is the foot of the first sample."""
    if isinstance(path, GeodesicPath):
        span = path.t[-1] - path.t[0]
    else:
        span = float(np.hypot(*np.diff(as_polyline(path), axis=0).T).sum())
    if span < min_span - 1e-9:
        raise InsufficientDataError(f"span {span:.3g} shorter than {min_span}")
    x = as_polyline(path)
    c = x.mean(0)
    _, _, vt = np.linalg.svd(x - c, full_matrices=False)
    e = vt[0]
    if (x[-1] - x[0]) @ e < 0:
        e = -e
    if isinstance(path, GeodesicPath) and path.t[0] <= 0 <= path.t[-1]:
        anchor = path.at(0.0)
    else:
        anchor = x[0]
    base = c + ((anchor - c) @ e) * e
    return Line(tuple(base), tuple(e))


def deviation(m: MetricField, path, line: Line, grid: Grid, chunk: int = 64) -> float:
    """sup_t d(c(t), l): exact point-to-line distances only where A * (Euclidean gap) exceeds the running max."""
    x = as_polyline(path)
    de = np.abs(line.offset(x))
    if m.is_flat:
        return float(de.max())
    hi = equivalence_constant(m) * de
    order = np.argsort(-hi)
    best = 0.0
    while len(order) and hi[order[0]] > best:
        take = order[:chunk]
        d, _ = point_line_distance(m, x[take], line.base, line.direction)
        best = max(best, float(d.max()))
        order = order[chunk:]
    return best


def hedlund_constant(m: MetricField, records, grid: Grid | None = None) -> float:
    """D = max over the sample of sup_t d(c(t), l_c)."""
    if not len(records):
        raise PreconditionError("hedlund_constant needs a non-empty sample")
    out = 0.0
    for rec in records:
        dev = rec.deviation
        if dev is None or math.isnan(dev):
            dev = deviation(m, rec.path, rec.line, grid)
        out = max(out, dev)
    return out


def project_to_line(m: MetricField, path, l: Line) -> np.ndarray:
    """Line parameter of the Riemannian nearest point of l for every sample."""
    x = as_polyline(path)
    _, s = point_line_distance(m, x, l.base, l.direction)
    return s


def is_strictly_monotone(params, tol: float = 1e-4) -> bool:
    """Strict monotonicity after collapsing consecutive values closer than tol."""
    p = np.asarray(params, float)
    if len(p) < 2:
        return True
    keep = [p[0]]
    for v in p[1:]:
        if abs(v - keep[-1]) > tol:
            keep.append(v)
    d = np.diff(keep)
    return bool(np.all(d > 0) or np.all(d < 0))


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def crossing_points(path1, path2, block: int = 256):
    """Transversal crossings as (index in path1, index in path2, point)."""
    p, q = as_polyline(path1), as_polyline(path2)
    out = []
    for i0 in range(0, len(p) - 1, block):
        a = p[i0 : i0 + block + 1]
        a0, a1 = a[:-1], a[1:]
        lo_a, hi_a = np.minimum(a0, a1).min(0), np.maximum(a0, a1).max(0)
        for j0 in range(0, len(q) - 1, block):
            b = q[j0 : j0 + block + 1]
            b0, b1 = b[:-1], b[1:]
            lo_b, hi_b = np.minimum(b0, b1).min(0), np.maximum(b0, b1).max(0)
            if np.any(lo_a > hi_b) or np.any(lo_b > hi_a):
                continue
            A0, A1 = a0[:, None], a1[:, None]
            B0, B1 = b0[None, :], b1[None, :]
            o1 = _orient(A0, A1, B0)
            o2 = _orient(A0, A1, B1)
            o3 = _orient(B0, B1, A0)
            o4 = _orient(B0, B1, A1)
            hit = (o1 * o2 < 0) & (o3 * o4 < 0)
            for i, j in zip(*np.nonzero(hit)):
                t = o3[i, j] / (o3[i, j] - o4[i, j])
                out.append((i0 + int(i), j0 + int(j), a0[i] + t * (a1[i] - a0[i])))
    out.sort(key=lambda c: c[0])
    return out


def crossing_count(path1, path2, touch: float = 1e-6) -> int:
    """Number of transversal crossings; a pair of consecutive crossings between which
    the curves never separate by more than ``touch`` is a touching and is discarded."""
    p, q = as_polyline(path1), as_polyline(path2)
    hits = crossing_points(p, q)
    if len(hits) < 2:
        return len(hits)
    kept = []
    for h in hits:
        if kept:
            i0, i1 = kept[-1][0], h[0]
            between = p[i0 + 1 : i1 + 1]
            gap = float(_polyline_dist_min(between, q).max()) if len(between) else 0.0
            if gap < touch:
                kept.pop()
                continue
        kept.append(h)
    return len(kept)


def same_image(path1, path2, tol: float = SAME_IMAGE_TOL, min_overlap: float = 1.0) -> bool:
    """Images agree on their common stretch (shifted parametrisations of one geodesic)."""
    p, q = as_polyline(path1), as_polyline(path2)
    e = p[-1] - p[0]
    e = e / np.hypot(*e)
    sp, sq = p @ e, q @ e
    lo = max(sp.min(), sq.min()) + 0.1
    hi = min(sp.max(), sq.max()) - 0.1
    if hi - lo < min_overlap:
        return False
    a = p[(sp >= lo) & (sp <= hi)]
    b = q[(sq >= lo) & (sq <= hi)]
    if len(a) == 0 or len(b) == 0:
        return False
    return max(float(_polyline_dist_min(a, q).max()), float(_polyline_dist_min(b, p).max())) < tol


def to_fundamental_domain(rec: MinimalRecord) -> MinimalRecord:
    x0 = rec.path.at(0.0)
    return rec.translated(-np.floor(x0))


def sample_minimal_conditions(
    m: MetricField,
    count: int,
    direction_set,
    grid: Grid,
    rng: np.random.Generator,
    R: float = MIN_SPAN,
    retries: int = 3,
    spacing: float = SPACING,
):
    """Certified minimal records, one per requested direction (cycled), translated into [0,1]^2."""
    if count < 0:
        raise PreconditionError("count must be non-negative")
    directions = list(direction_set)
    out, failures = [], []
    for i in range(count):
        angle = float(directions[i % len(directions)])
        for attempt in range(retries):
            base = rng.uniform(0.0, 1.0, 2)
            l = Line.from_angle(base, angle)
            rec = minimal_geodesic_for_line(m, l, R, grid, spacing=spacing)
            if rec.certified:
                out.append(to_fundamental_domain(rec))
                break
            failures.append({"angle": angle, "attempt": attempt, "slack": rec.minimality_slack,
                             "stability": rec.stability})
    return out, failures
