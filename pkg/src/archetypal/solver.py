"""Grid functions and the averaging operator (T y)(x) = E y(alpha (x - beta)).

Grid functions are linearly interpolated inside the grid and extended by
their end values outside it.  Continuous shift laws are integrated by
product integration: the integrand is the linear interpolant of ``y`` on
a node set of step ``dx / refine`` and each node carries the exact density
mass of its hat function, renormalised to 1 per atom.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import QuadratureUnderflow
from .laws import CoefficientLaw, PointMass

SNAP = 1e-9
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class GridFunction:
    x_min: float
    dx: float
    values: np.ndarray
    extension: str = "clamp"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a grid function needs at least two values")
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")

    @classmethod
    def from_function(cls, f: Callable, x_min: float, x_max: float, dx: float) -> "GridFunction":
        n = int(round((x_max - x_min) / dx)) + 1
        x = x_min + dx * np.arange(n)
        return cls(float(x_min), float(dx), np.asarray(f(x), dtype=float) * np.ones(n))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.n - 1)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.x_min, self.dx, values, self.extension)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _InterpPlan(self, x.ravel()).apply(self.values).reshape(x.shape)

    def header(self) -> dict:
        return {"x_min": self.x_min, "dx": self.dx, "n": self.n, "extension": self.extension}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for xi, yi in zip(self.x, self.values):
                w.writerow([repr(float(xi)), repr(float(yi))])

    def write_header(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)

    @classmethod
    def read_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        x = np.array([float(r["x"]) for r in rows])
        y = np.array([float(r["y"]) for r in rows])
        dx = (x[-1] - x[0]) / (len(x) - 1)
        if not np.allclose(np.diff(x), dx, rtol=1e-9, atol=1e-12):
            raise ValueError("grid CSV must be uniformly spaced")
        return cls(float(x[0]), float(dx), y)


class _InterpPlan:
    """Precomputed linear interpolation with clamping at fixed query points."""

    def __init__(self, y: GridFunction, xq: np.ndarray):
        pos = (np.asarray(xq, dtype=float) - y.x_min) / y.dx
        pos = np.clip(pos, 0.0, y.n - 1)
        near = np.rint(pos)
        pos = np.where(np.abs(pos - near) < SNAP, near, pos)
        lo = np.minimum(np.floor(pos).astype(np.int64), y.n - 2)
        self.lo = lo
        self.frac = pos - lo

    def apply(self, values: np.ndarray) -> np.ndarray:
        v0 = values[self.lo]
        return v0 + self.frac * (values[self.lo + 1] - v0)


@dataclass(frozen=True)
class QuadratureSettings:
    tail_tol: float = 1e-10
    refine: int = 1
    renormalize: bool = True


def hat_weights(shift, h: float, tail_tol: float) -> tuple[float, np.ndarray, float]:
    """Nodes ``lo + k h`` and the density mass of each node's hat function.

    Returns ``(lo, weights, raw_mass)`` with weights not yet renormalised.
    """
    lo, hi = shift.support(tail_tol)
    K = max(int(math.ceil((hi - lo) / h - 1e-12)), 1)
    w = np.zeros(K + 1)
    for k in range(K):
        a, b = lo + k * h, min(lo + (k + 1) * h, hi)
        if b <= a:
            continue
        t = 0.5 * (a + b) + 0.5 * (b - a) * _GL_NODES
        f = shift.density(t) * 0.5 * (b - a) * _GL_WEIGHTS
        s = (t - (lo + k * h)) / h
        w[k] += np.sum(f * (1.0 - s))
        w[k + 1] += np.sum(f * s)
    return lo, w, float(w.sum())


class OperatorPlan:
    """The operator T for a fixed grid and law, ready for repeated application."""

    def __init__(self, y: GridFunction, law: CoefficientLaw, quad: Optional[QuadratureSettings] = None):
        quad = quad or QuadratureSettings()
        self.grid = y
        self.law = law
        self.quad = quad
        x = y.x
        self._point = []
        self._conv = []
        for at in law.atoms:
            if isinstance(at.shift, PointMass):
                self._point.append((at.p, _InterpPlan(y, at.a * (x - at.shift.b))))
                continue
            r = int(quad.refine)
            h = y.dx / r
            lo, w, mass = hat_weights(at.shift, h, quad.tail_tol)
            if 1.0 - mass > quad.tail_tol + 1e-12 and not quad.renormalize:
                raise QuadratureUnderflow(
                    f"quadrature keeps mass {mass:.12g}, drops more than {quad.tail_tol}"
                )
            if quad.renormalize:
                w = w / mass
            K = w.size - 1
            u = (y.x_min - lo) + h * np.arange(-K, (y.n - 1) * r + 1)
            take = np.arange(y.n) * r + K
            self._conv.append((at.p, _InterpPlan(y, at.a * u), w, take, lo, h))

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        ref = values[0]
        dev = values - ref
        out = np.zeros_like(dev)
        for p, plan in self._point:
            out += p * plan.apply(dev)
        for p, plan, w, take, _, _ in self._conv:
            full = np.convolve(plan.apply(dev), w)
            out += p * full[take]
        return ref + out

    def apply(self, y: GridFunction) -> GridFunction:
        return y.with_values(self.apply_values(y.values))

    def outside_mass(self) -> np.ndarray:
        """Per node, the probability that the image a(x - beta) leaves the grid."""
        g = self.grid
        x = g.x
        out = np.zeros(g.n)
        for at in self.law.atoms:
            if isinstance(at.shift, PointMass):
                z = at.a * (x - at.shift.b)
                out += at.p * ((z < g.x_min - 1e-12) | (z > g.x_max + 1e-12))
                continue
            lo, w, mass = hat_weights(at.shift, g.dx / self.quad.refine, self.quad.tail_tol)
            w = w / mass
            t = lo + (g.dx / self.quad.refine) * np.arange(w.size)
            if at.a == 0:
                inside = np.full(g.n, g.x_min <= 0.0 <= g.x_max, dtype=float)
            else:
                b1, b2 = sorted((g.x_min / at.a, g.x_max / at.a))
                cw = np.concatenate([[0.0], np.cumsum(w)])
                # inside iff x - t in [b1, b2]  <=>  t in [x - b2, x - b1]
                i1 = np.searchsorted(t, x - b2 - 1e-12, side="left")
                i2 = np.searchsorted(t, x - b1 + 1e-12, side="right")
                inside = cw[i2] - cw[i1]
            out += at.p * np.clip(1.0 - inside, 0.0, 1.0)
        return out


def apply_operator(
    y: GridFunction, law: CoefficientLaw, quad: Optional[QuadratureSettings] = None
) -> GridFunction:
    return OperatorPlan(y, law, quad).apply(y)


def interior_mask(
    y: GridFunction,
    law: CoefficientLaw,
    quad: Optional[QuadratureSettings] = None,
    outside_tol: float = 1e-6,
    plan: Optional[OperatorPlan] = None,
) -> np.ndarray:
    """Nodes whose operator images leave the grid with probability at most ``outside_tol``."""
    plan = plan or OperatorPlan(y, law, quad)
    return plan.outside_mass() <= outside_tol


def residual_sup(
    y: GridFunction,
    law: CoefficientLaw,
    quad: Optional[QuadratureSettings] = None,
    outside_tol: float = 1e-6,
) -> float:
    """max |y - T y| over the interior window; NaN if the window is empty."""
    plan = OperatorPlan(y, law, quad)
    mask = plan.outside_mass() <= outside_tol
    if not mask.any():
        return math.nan
    r = np.abs(y.values - plan.apply_values(y.values))
    return float(r[mask].max())


def middle_half(y: GridFunction) -> tuple[float, float]:
    span = y.x_max - y.x_min
    return (y.x_min + 0.25 * span, y.x_max - 0.25 * span)


def dispersion(y: GridFunction, window: Optional[tuple[float, float]] = None) -> float:
    lo, hi = window if window is not None else middle_half(y)
    x = y.x
    pts = np.concatenate([[lo, hi], x[(x >= lo) & (x <= hi)]])
    v = y(pts)
    return float(v.max() - v.min())


def modulus_of_continuity(y: GridFunction, h: float) -> float:
    if h < y.dx * (1 - 1e-12):
        raise ValueError("h must be at least the grid step")
    x = y.x
    return float(np.max(np.abs(y(x + h) - y.values)))


@dataclass
class IterationTrace:
    step_norms: list = field(default_factory=list)
    dispersions: list = field(default_factory=list)
    final_residual: float = math.nan

    @property
    def iterations(self) -> int:
        return len(self.step_norms)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "step_norm", "dispersion"])
            for i, (s, d) in enumerate(zip(self.step_norms, self.dispersions), start=1):
                w.writerow([i, repr(float(s)), repr(float(d))])


def picard_iterate(
    y0: GridFunction,
    law: CoefficientLaw,
    max_iter: int = 500,
    step_tol: float = 1e-12,
    quad: Optional[QuadratureSettings] = None,
    window: Optional[tuple[float, float]] = None,
    outside_tol: float = 1e-6,
) -> tuple[GridFunction, IterationTrace]:
    """Iterate y <- T y until the sup-norm step is at most ``step_tol``.

    Non-convergence is not an error; the trace records what happened.
    """
    plan = OperatorPlan(y0, law, quad)
    trace = IterationTrace()
    v = y0.values
    for _ in range(max_iter):
        nxt = plan.apply_values(v)
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        trace.step_norms.append(step)
        trace.dispersions.append(dispersion(y0.with_values(v), window))
        if step <= step_tol:
            break
    y = y0.with_values(v)
    mask = plan.outside_mass() <= outside_tol
    if mask.any():
        trace.final_residual = float(np.max(np.abs(v - plan.apply_values(v))[mask]))
    return y, trace
