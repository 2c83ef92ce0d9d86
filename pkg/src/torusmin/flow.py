"""Geodesic flow on the unit tangent bundle of the plane and the dynamical distance.

For g = exp(2f) g_E a g-unit velocity is exp(-f)(cos th, sin th), and the
geodesic equation x'' + Gamma(x', x') = 0 reduces to

    x'  = exp(-f) (cos th, sin th)
    th' = exp(-f) (-f_1 sin th + f_2 cos th)

which RK4 integrates with unit speed held exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import HorizonError, PreconditionError, StepSizeError
from .geometry.distance import distance_bounds, pairwise_distance
from .geometry.grid import Grid
from .geometry.metric import TWO_PI, MetricField

MAX_STEP = 1e-2
DEFAULT_STEP = 5e-3
SAMPLE_SPACING = 0.05
DEFAULT_HORIZON = 2000.0


@dataclass(frozen=True)
class PhasePoint:
    x: tuple
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", (float(self.x[0]), float(self.x[1])))
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def point(self) -> np.ndarray:
        return np.array(self.x)

    def velocity(self, m: MetricField) -> np.ndarray:
        w = math.exp(-float(m.f(self.point)))
        return w * np.array([math.cos(self.theta), math.sin(self.theta)])

    def reversed(self) -> "PhasePoint":
        return PhasePoint(self.x, self.theta + math.pi)

    def translated(self, shift) -> "PhasePoint":
        return PhasePoint((self.x[0] + shift[0], self.x[1] + shift[1]), self.theta)

    def to_dict(self) -> dict:
        return {"x": list(self.x), "theta": self.theta}


@dataclass
class GeodesicPath:
    """Uniformly arc-length sampled lift; ``t[0]`` is the first parameter."""

    t: np.ndarray
    x: np.ndarray
    theta: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @property
    def span(self) -> tuple:
        return float(self.t[0]), float(self.t[-1])

    def __len__(self):
        return len(self.t)

    def at(self, t) -> np.ndarray:
        """Positions at parameters t (linear interpolation between samples)."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        if np.any(t < lo - 1e-9) or np.any(t > hi + 1e-9):
            raise HorizonError(f"parameter outside the sampled span [{lo:.4g}, {hi:.4g}]")
        return np.stack(
            [np.interp(t, self.t, self.x[:, 0]), np.interp(t, self.t, self.x[:, 1])], axis=-1
        )

    def phase(self, t: float) -> PhasePoint:
        th = np.unwrap(self.theta)
        return PhasePoint(self.at(t), float(np.interp(t, self.t, th)))

    def translated(self, shift) -> "GeodesicPath":
        return GeodesicPath(self.t.copy(), self.x + np.asarray(shift, float), self.theta.copy())

    def shifted(self, dt: float) -> "GeodesicPath":
        """Same image, parameter moved so that the old time dt becomes 0."""
        return GeodesicPath(self.t - dt, self.x.copy(), self.theta.copy())

    def window(self, t0: float, t1: float) -> "GeodesicPath":
        keep = (self.t >= t0 - 1e-9) & (self.t <= t1 + 1e-9)
        return GeodesicPath(self.t[keep], self.x[keep], self.theta[keep])

    def rows(self):
        for t, (a, b), th in zip(self.t, self.x, self.theta):
            yield float(t), float(a), float(b), float(th)


@numba.njit(cache=True)
def _rhs(x1, x2, th, k, c, s):
    f = 0.0
    g1 = 0.0
    g2 = 0.0
    for i in range(k.shape[0]):
        ph = 2.0 * np.pi * (k[i, 0] * x1 + k[i, 1] * x2)
        cp = math.cos(ph)
        sp = math.sin(ph)
        f += c[i] * cp + s[i] * sp
        a = 2.0 * np.pi * (-c[i] * sp + s[i] * cp)
        g1 += a * k[i, 0]
        g2 += a * k[i, 1]
    w = math.exp(-f)
    ct = math.cos(th)
    st = math.sin(th)
    return w * ct, w * st, w * (-g1 * st + g2 * ct)


@numba.njit(cache=True)
def _rk4(x1, x2, th, k, c, s, step, n_samples, substeps):
    out = np.empty((n_samples + 1, 3))
    out[0, 0] = x1
    out[0, 1] = x2
    out[0, 2] = th
    for j in range(n_samples):
        for _ in range(substeps):
            a1, b1, c1 = _rhs(x1, x2, th, k, c, s)
            h2 = 0.5 * step
            a2, b2, c2 = _rhs(x1 + h2 * a1, x2 + h2 * b1, th + h2 * c1, k, c, s)
            a3, b3, c3 = _rhs(x1 + h2 * a2, x2 + h2 * b2, th + h2 * c2, k, c, s)
            a4, b4, c4 = _rhs(x1 + step * a3, x2 + step * b3, th + step * c3, k, c, s)
            x1 += step * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0
            x2 += step * (b1 + 2 * b2 + 2 * b3 + b4) / 6.0
            th += step * (c1 + 2 * c2 + 2 * c3 + c4) / 6.0
        out[j + 1, 0] = x1
        out[j + 1, 1] = x2
        out[j + 1, 2] = th
    return out


def _check(T: float, h: float, horizon: float):
    if not (0 < h <= MAX_STEP):
        raise StepSizeError(f"step {h} outside (0, {MAX_STEP}]")
    if T < 0:
        raise PreconditionError("integration time must be non-negative")
    if T > horizon:
        raise HorizonError(f"T = {T} exceeds the configured horizon {horizon}")


def integrate(
    m: MetricField,
    v: PhasePoint,
    T: float,
    h: float = DEFAULT_STEP,
    spacing: float = SAMPLE_SPACING,
    horizon: float = DEFAULT_HORIZON,
) -> GeodesicPath:
    """Sample the unit-speed geodesic c_v on [0, T] every ``spacing`` (or finer)."""
    _check(T, h, horizon)
    if T == 0:
        return GeodesicPath(np.zeros(1), np.array([v.x]), np.array([v.theta]))
    n_samples = max(1, int(math.ceil(T / spacing - 1e-9)))
    hs = T / n_samples
    substeps = max(1, int(math.ceil(hs / h - 1e-9)))
    step = hs / substeps
    a = m._arrays
    out = _rk4(v.x[0], v.x[1], v.theta, a["k"], a["c"], a["s"], step, n_samples, substeps)
    t = hs * np.arange(n_samples + 1)
    return GeodesicPath(t, out[:, :2], out[:, 2])


def integrate_window(m: MetricField, v: PhasePoint, t0: float, t1: float, **kw) -> GeodesicPath:
    """Geodesic through v sampled on [t0, t1] with t0 <= 0 <= t1."""
    fwd = integrate(m, v, t1, **kw)
    if t0 >= 0:
        return fwd.window(t0, t1)
    back = integrate(m, v.reversed(), -t0, **kw)
    t = np.concatenate([-back.t[:0:-1], fwd.t])
    x = np.concatenate([back.x[:0:-1], fwd.x])
    th = np.concatenate([back.theta[:0:-1] - math.pi, fwd.theta])
    return GeodesicPath(t, x, th)


def flow_map(m: MetricField, v: PhasePoint, t: float, h: float = DEFAULT_STEP, **kw) -> PhasePoint:
    """phi^t(v); negative t flows backwards."""
    if t == 0:
        return v
    if t < 0:
        return flow_map(m, v.reversed(), -t, h, **kw).reversed()
    path = integrate(m, v, t, h=h, spacing=t, **kw)
    return PhasePoint(path.x[-1], path.theta[-1])


def speed_defect(m: MetricField, path: GeodesicPath) -> float:
    """max | |c'|_g - 1 | reconstructed from the stored angles."""
    w = np.exp(m.f(path.x))
    vel = np.exp(-m.f(path.x))[:, None] * np.column_stack([np.cos(path.theta), np.sin(path.theta)])
    speed = w * np.hypot(vel[:, 0], vel[:, 1])
    return float(np.abs(speed - 1.0).max())


# dynamical distance


def _as_path(m, v, T, **kw) -> GeodesicPath:
    if isinstance(v, GeodesicPath):
        return v
    return integrate(m, v, T, **kw)


def sample_times(T: float, spacing: float = SAMPLE_SPACING, t0: float = 0.0) -> np.ndarray:
    n = max(1, int(math.ceil((T - t0) / spacing - 1e-9)))
    return np.linspace(t0, T, n + 1)


def sup_distance(m: MetricField, A, B, grid: Grid, chunk: int = 24) -> float:
    """max_k d(A[k], B[k]); exact distances only where the cheap bounds leave doubt."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    lo, hi = distance_bounds(m, A, B)
    if m.is_flat:
        return float(hi.max())
    best = float(lo.max())
    order = np.argsort(-hi)
    order = order[hi[order] > best]
    while len(order):
        take = order[:chunk]
        d = pairwise_distance(m, A[take], B[take], grid)
        best = max(best, float(d.max()))
        order = order[chunk:]
        order = order[hi[order] > best]
    return best


def sup_exceeds(m: MetricField, A, B, grid: Grid, eps: float, chunk: int = 16) -> bool:
    """Whether max_k d(A[k], B[k]) > eps, deciding by bounds where possible."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    lo, hi = distance_bounds(m, A, B)
    if np.any(lo > eps):
        return True
    order = np.argsort(-hi)
    order = order[hi[order] > eps]
    for start in range(0, len(order), chunk):
        take = order[start : start + chunk]
        if np.any(pairwise_distance(m, A[take], B[take], grid) > eps):
            return True
    return False


def dynamical_distance(
    m: MetricField, v, w, T: float, grid: Grid, spacing: float = SAMPLE_SPACING, **kw
) -> float:
    """d-bar(v, w)_T = max over sampled t in [0, T+1] of d(c_v(t), c_w(t))."""
    if T < 0:
        raise PreconditionError("T must be non-negative")
    pv = _as_path(m, v, T + 1, spacing=spacing, **kw)
    pw = _as_path(m, w, T + 1, spacing=spacing, **kw)
    ts = sample_times(T + 1, spacing)
    return sup_distance(m, pv.at(ts), pw.at(ts), grid)
