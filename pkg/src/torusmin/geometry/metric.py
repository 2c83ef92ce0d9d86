"""Conformal Fourier metrics g = exp(2f) g_E on the torus, lifted to the plane."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize

from ..errors import BudgetError, ConfigError

FLAT = "flat"
CONFORMAL = "conformal"
AMPLITUDE_BUDGET = 0.75
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MetricField:
    """Metric exp(2f) g_E with f a finite integer-wavenumber Fourier series.

    ``coefficients`` holds tuples ``(k1, k2, c, s)`` contributing
    ``c cos(2 pi (k1 x1 + k2 x2)) + s sin(2 pi (k1 x1 + k2 x2))`` to f.
    """

    mode: str = FLAT
    coefficients: tuple = ()
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in (FLAT, CONFORMAL):
            raise ConfigError(f"unknown metric mode {self.mode!r}")
        coeffs = tuple(
            (int(k1), int(k2), float(c), float(s)) for k1, k2, c, s in self.coefficients
        )
        if self.mode == FLAT and coeffs:
            raise ConfigError("a FLAT metric carries no coefficients")
        for k1, k2, c, s in self.coefficients:
            if int(k1) != k1 or int(k2) != k2:
                raise ConfigError("wavenumbers must be integers")
        budget = sum(abs(c) + abs(s) for _, _, c, s in coeffs)
        if budget > AMPLITUDE_BUDGET + 1e-12:
            raise BudgetError(
                f"amplitude budget {budget:.4g} exceeds {AMPLITUDE_BUDGET}"
            )
        object.__setattr__(self, "coefficients", coeffs)
        if coeffs:
            arr = np.array(coeffs, dtype=float)
            k = arr[:, :2]
            c, s = arr[:, 2], arr[:, 3]
        else:
            k = np.zeros((0, 2))
            c = s = np.zeros(0)
        object.__setattr__(self, "_arrays", {"k": k, "c": c, "s": s})

    @classmethod
    def flat(cls) -> "MetricField":
        return cls(FLAT, ())

    @classmethod
    def conformal(cls, coefficients) -> "MetricField":
        return cls(CONFORMAL, tuple(tuple(c) for c in coefficients))

    @property
    def is_flat(self) -> bool:
        return not self.coefficients

    @property
    def amplitude(self) -> float:
        return sum(abs(c) + abs(s) for _, _, c, s in self.coefficients)

    @property
    def wavenumbers(self) -> np.ndarray:
        return self._arrays["k"]

    def to_dict(self) -> dict:
        if self.mode == FLAT:
            return {"type": "flat", "coeffs": []}
        return {"type": "conformal-fourier", "coeffs": [list(c) for c in self.coefficients]}

    @classmethod
    def from_dict(cls, block: dict) -> "MetricField":
        kind = block.get("type", "conformal-fourier")
        coeffs = block.get("coeffs", [])
        if kind == "flat":
            return cls.flat()
        if kind != "conformal-fourier":
            raise ConfigError(f"unknown metric type {kind!r}")
        for row in coeffs:
            if len(row) != 4:
                raise ConfigError(f"coefficient rows need 4 entries, got {row!r}")
        return cls(CONFORMAL, tuple(tuple(r) for r in coeffs))

    @cached_property
    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    # Fourier evaluation; every method broadcasts over leading axes of x.

    def _phase(self, x):
        x = np.asarray(x, dtype=float)
        return TWO_PI * (x @ self._arrays["k"].T)

    def f(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_flat:
            return np.zeros(x.shape[:-1])
        ph = self._phase(x)
        return np.cos(ph) @ self._arrays["c"] + np.sin(ph) @ self._arrays["s"]

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_flat:
            return np.zeros(x.shape)
        ph = self._phase(x)
        amp = -np.sin(ph) * self._arrays["c"] + np.cos(ph) * self._arrays["s"]
        return TWO_PI * (amp @ self._arrays["k"])

    def derivs(self, x):
        """Return ``(f, grad f, hess f)`` at ``x``."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        if self.is_flat:
            return np.zeros(lead), np.zeros(lead + (2,)), np.zeros(lead + (2, 2))
        k = self._arrays["k"]
        ph = self._phase(x)
        cos, sin = np.cos(ph), np.sin(ph)
        c, s = self._arrays["c"], self._arrays["s"]
        val = cos @ c + sin @ s
        grad = TWO_PI * ((-sin * c + cos * s) @ k)
        kk = np.einsum("mi,mj->mij", k, k)
        hess = -(TWO_PI**2) * np.einsum("...m,mij->...ij", cos * c + sin * s, kk)
        return val, grad, hess

    def weight(self, x) -> np.ndarray:
        """Length density exp(f)."""
        return np.exp(self.f(x))

    # Global bounds.

    @cached_property
    def lipschitz(self) -> float:
        """Upper bound on |grad f| from the coefficient sizes."""
        k = self._arrays["k"]
        if not len(k):
            return 0.0
        norms = np.hypot(k[:, 0], k[:, 1])
        return float(TWO_PI * np.sum(norms * (np.abs(self._arrays["c"]) + np.abs(self._arrays["s"]))))

    @cached_property
    def f_range(self) -> tuple[float, float]:
        """(min f, max f) over the torus, grid scan refined by local optimisation."""
        if self.is_flat:
            return 0.0, 0.0
        n = 256
        xs = (np.arange(n) + 0.0) / n
        pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
        vals = self.f(pts)
        out = []
        for sign in (1.0, -1.0):
            flat = (sign * vals).ravel()
            best = sign * flat.min()
            for idx in np.argsort(flat)[:8]:
                x0 = pts.reshape(-1, 2)[idx]
                res = minimize(
                    lambda p: sign * float(self.f(p)),
                    x0,
                    jac=lambda p: sign * self.grad(p),
                    method="BFGS",
                    options={"gtol": 1e-12},
                )
                cand = float(self.f(res.x))
                best = min(best, cand) if sign > 0 else max(best, cand)
            out.append(best)
        return out[0], out[1]

    @cached_property
    def curvature_bound(self) -> float:
        """Grid estimate of max |K| with K = -exp(-2f) lap f."""
        if self.is_flat:
            return 0.0
        n = 128
        xs = np.arange(n) / n
        pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1)
        f, _, h = self.derivs(pts)
        curv = np.abs(np.exp(-2 * f) * (h[..., 0, 0] + h[..., 1, 1]))
        return float(curv.max())


def eval_metric(m: MetricField, x) -> np.ndarray:
    """Metric tensor exp(2f(x)) I at one point or a batch of points."""
    x = np.asarray(x, dtype=float)
    scale = np.exp(2.0 * m.f(x))
    return scale[..., None, None] * np.eye(2)


def christoffel(m: MetricField, x) -> np.ndarray:
    """Christoffel symbols ``G[k, i, j]`` of the conformal metric at ``x``."""
    x = np.asarray(x, dtype=float)
    g = m.grad(x)
    f1, f2 = g[..., 0], g[..., 1]
    out = np.zeros(x.shape[:-1] + (2, 2, 2))
    out[..., 0, 0, 0] = f1
    out[..., 0, 0, 1] = out[..., 0, 1, 0] = f2
    out[..., 0, 1, 1] = -f1
    out[..., 1, 0, 0] = -f2
    out[..., 1, 0, 1] = out[..., 1, 1, 0] = f1
    out[..., 1, 1, 1] = f2
    return out


def equivalence_constant(m: MetricField) -> float:
    """A with d_E / A <= d <= A d_E on the plane, i.e. exp(max |f|)."""
    lo, hi = m.f_range
    return math.exp(max(abs(lo), abs(hi)))
