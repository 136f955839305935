"""Pantograph functional-differential equations and their archetypal form.

An order-r pantograph equation prod_j (1 + D/kappa_j) y = phi, with
phi(x) = E y(alpha (x - gamma)), is the archetypal equation whose shift is
beta = gamma + xi, xi = sum_j eta_j / kappa_j (eta_j standard exponentials).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import signal, stats

from .errors import GridTooCoarse, InvalidLaw
from .laws import PROB_TOL, Atom, CoefficientLaw, ExponentialFrom, PointPlusHypoexp
from .solver import GridFunction, IterationTrace, _InterpPlan, dispersion

CONV_POINTS = 1 << 15


@dataclass(frozen=True)
class PantographSpec:
    kappas: tuple[float, ...]
    atoms: tuple[tuple[float, float, float], ...]  # (a, c, p)

    def __post_init__(self):
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        object.__setattr__(self, "atoms", tuple(tuple(map(float, t)) for t in self.atoms))
        if not self.kappas or any(k == 0 for k in self.kappas):
            raise InvalidLaw("kappas must be a nonempty list of nonzero reals")
        if not self.atoms:
            raise InvalidLaw("pantograph base law needs at least one atom")
        if abs(math.fsum(p for _, _, p in self.atoms) - 1.0) > PROB_TOL:
            raise InvalidLaw("base probabilities must sum to 1")

    @property
    def order(self) -> int:
        return len(self.kappas)

    @classmethod
    def from_dict(cls, d: dict) -> "PantographSpec":
        return cls(tuple(d["kappas"]), tuple((x["a"], x["c"], x["p"]) for x in d["atoms"]))

    def to_dict(self) -> dict:
        return {
            "kappas": list(self.kappas),
            "atoms": [{"a": a, "c": c, "p": p} for a, c, p in self.atoms],
        }


def pantograph_to_archetypal(spec: PantographSpec) -> CoefficientLaw:
    """Coefficient law with shift c_i + xi for each base atom.

    For the first-order unit case the shift is stored as ``ExponentialFrom``.
    """
    atoms = []
    for a, c, p in spec.atoms:
        if spec.kappas == (1.0,):
            shift = ExponentialFrom(c)
        else:
            shift = PointPlusHypoexp(c, spec.kappas)
        atoms.append(Atom(a, p, shift))
    return CoefficientLaw(tuple(atoms))


# --------------------------------------------------------------------------
# density of xi


def _one_sided(kappa: float, t: np.ndarray) -> np.ndarray:
    lam = abs(kappa)
    u = t if kappa > 0 else -t
    return np.where(u >= 0, lam * np.exp(-lam * np.maximum(u, 0.0)), 0.0)


def _two_term(k1: float, k2: float, t: np.ndarray) -> np.ndarray:
    if k1 * k2 < 0:
        l1, l2 = (k1, -k2) if k1 > 0 else (k2, -k1)
        c = l1 * l2 / (l1 + l2)
        return np.where(t >= 0, c * np.exp(-l1 * np.maximum(t, 0)), c * np.exp(l2 * np.minimum(t, 0)))
    sgn = 1.0 if k1 > 0 else -1.0
    u = sgn * t
    l1, l2 = abs(k1), abs(k2)
    pos = u > 0
    uu = np.where(pos, u, 0.0)
    if l1 == l2:
        f = l1 * l1 * uu * np.exp(-l1 * uu)
    else:
        f = l1 * l2 / (l2 - l1) * (np.exp(-l1 * uu) - np.exp(-l2 * uu))
    return np.where(pos, f, 0.0)


def xi_support(kappas: Sequence[float], tail_tol: float = 1e-10) -> tuple[float, float]:
    """Interval outside which xi has mass at most ``tail_tol``.

    Each side is bounded by a Gamma tail with the slowest rate on that side.
    """
    pos = [k for k in kappas if k > 0]
    neg = [-k for k in kappas if k < 0]
    share = tail_tol / (2 if pos and neg else 1)
    hi = stats.gamma.isf(share, len(pos), scale=1.0 / min(pos)) if pos else 0.0
    lo = -stats.gamma.isf(share, len(neg), scale=1.0 / min(neg)) if neg else 0.0
    return float(lo), float(hi)


@functools.lru_cache(maxsize=32)
def _numeric_density(kappas: tuple[float, ...]):
    lo, hi = xi_support(kappas, 1e-13)
    h = (hi - lo) / CONV_POINTS
    pmf = np.array([1.0])
    offset = 0  # grid index of t = 0 inside pmf
    for k in kappas:
        lam = abs(k)
        n = int(math.ceil((hi - lo) / h)) + 1
        edges = (np.arange(n + 1) - 0.5) * h
        edges[0] = 0.0
        cell = np.exp(-lam * edges[:-1]) - np.exp(-lam * edges[1:])
        if k > 0:
            pmf = np.convolve(pmf, cell)
        else:
            pmf = np.convolve(pmf, cell[::-1])
            offset += n - 1
    t = (np.arange(pmf.size) - offset) * h
    keep = (t >= lo - h) & (t <= hi + h)
    t, dens = t[keep], pmf[keep] / h
    dens /= np.trapezoid(dens, t)
    return t, dens


def xi_density(kappas: Sequence[float], t) -> np.ndarray:
    """Density of xi = sum_j eta_j / kappa_j at ``t``."""
    kappas = tuple(float(k) for k in kappas)
    t = np.asarray(t, dtype=float)
    if len(kappas) == 1:
        return _one_sided(kappas[0], t)
    if len(kappas) == 2:
        return _two_term(kappas[0], kappas[1], t)
    grid, dens = _numeric_density(kappas)
    return np.interp(t, grid, dens, left=0.0, right=0.0)


# --------------------------------------------------------------------------
# differential residual


def differential_coefficients(kappas: Sequence[float]) -> np.ndarray:
    """Coefficients c_k of prod_j (1 + s/kappa_j) = sum_k c_k s^k, lowest first."""
    poly = np.array([1.0])
    for k in kappas:
        poly = np.convolve(poly, [1.0, 1.0 / k])
    return poly


def _central(v: np.ndarray, dx: float, order: int) -> np.ndarray:
    """order-th derivative by nested second-order central stencils; NaN where undefined."""
    out = v.astype(float).copy()
    if order % 2:
        d = np.full_like(out, np.nan)
        d[1:-1] = (out[2:] - out[:-2]) / (2 * dx)
        out = d
    for _ in range(order // 2):
        d = np.full_like(out, np.nan)
        d[1:-1] = (out[2:] - 2 * out[1:-1] + out[:-2]) / dx**2
        out = d
    return out


def rhs_phi(y: GridFunction, spec_or_atoms, x: Optional[np.ndarray] = None) -> np.ndarray:
    atoms = spec_or_atoms.atoms if isinstance(spec_or_atoms, PantographSpec) else spec_or_atoms
    x = y.x if x is None else x
    return sum(p * y(a * (x - c)) for a, c, p in atoms)


def ode_residual(y: GridFunction, spec: PantographSpec, tol: Optional[float] = None) -> float:
    """sup over interior nodes of |prod_j (1 + D/kappa_j) y - phi|."""
    r = spec.order
    if y.n < 2 * r + 3:
        raise GridTooCoarse(f"need at least {2 * r + 3} nodes for order {r}")
    if tol is not None and y.dx**2 * float(np.max(np.abs(y.values))) > tol:
        raise GridTooCoarse(f"dx^2 * |y| exceeds the requested tolerance {tol}")
    coef = differential_coefficients(spec.kappas)
    ref = y.values[0]
    dev = y.values - ref
    lhs = np.zeros(y.n)
    for k, c in enumerate(coef):
        if c != 0.0:
            lhs = lhs + c * (dev if k == 0 else _central(dev, y.dx, k))
    x = y.x
    phi = sum(p * _InterpPlan(y, a * (x - c)).apply(dev) for a, c, p in spec.atoms)
    inside = np.ones(y.n, dtype=bool)
    for a, c, _ in spec.atoms:
        z = a * (x - c)
        inside &= (z >= y.x_min - 1e-12) & (z <= y.x_max + 1e-12)
    # constant part: sum c_k D^k ref = ref and sum p_i ref = ref cancel exactly
    res = np.abs(lhs - phi)
    ok = inside & np.isfinite(res)
    if not ok.any():
        return math.nan
    return float(res[ok].max())


# --------------------------------------------------------------------------
# variation of constants

MAX_PADDING_FACTOR = 10


def _left_padding(y: GridFunction, atoms) -> int:
    """Nodes to prepend so that every image a(u - c) has left the grid.

    Left of the padded grid phi is then exactly the clamp constant, which
    makes the analytic tail closure agree with clamp extension.  Padding is
    capped at ``MAX_PADDING_FACTOR`` grid lengths.
    """
    start = y.x_min
    for a, c, _ in atoms:
        if a > 0:
            start = min(start, c + y.x_min / a)
        elif a < 0:
            start = min(start, c + y.x_max / a)
    pad = int(math.ceil((y.x_min - start) / y.dx - 1e-9))
    return max(0, min(pad, MAX_PADDING_FACTOR * y.n))



def picard_variation_of_constants(
    y0: GridFunction,
    base: Union[PantographSpec, Sequence[tuple[float, float, float]]],
    max_iter: int = 200,
    step_tol: float = 1e-12,
    window: Optional[tuple[float, float]] = None,
) -> tuple[GridFunction, IterationTrace]:
    """Iterate y <- int_{-inf}^x phi(u) e^{u-x} du for y' + y = phi.

    ``phi`` is linearly interpolated between nodes and integrated exactly
    against the exponential kernel; left of the grid it is held at its
    first value, which closes the tail integral analytically.
    """
    if isinstance(base, PantographSpec):
        if base.kappas != (1.0,):
            raise InvalidLaw("variation of constants is first order: kappas must be (1,)")
        atoms = base.atoms
    else:
        atoms = tuple(tuple(map(float, t)) for t in base)
    h = y0.dx
    pad = _left_padding(y0, atoms)
    u = y0.x_min + h * np.arange(-pad, y0.n)
    E = math.exp(-h)
    c0 = 1.0 - E
    c1 = (h - 1.0 + E) / h
    plans = [(p, _InterpPlan(y0, a * (u - c))) for a, c, p in atoms]
    trace = IterationTrace()
    v = y0.values.copy()
    for _ in range(max_iter):
        ref = v[0]
        dev = v - ref
        phi = np.zeros(u.size)
        for p, plan in plans:
            phi += p * plan.apply(dev)
        g = phi[:-1] * c0 + (phi[1:] - phi[:-1]) * c1
        full = np.empty(u.size)
        full[0] = phi[0]
        full[1:], _ = signal.lfilter([1.0], [1.0, -E], g, zi=[E * phi[0]])
        nxt = full[pad:] + ref
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        trace.step_norms.append(step)
        trace.dispersions.append(dispersion(y0.with_values(v), window))
        if step <= step_tol:
            break
    y = y0.with_values(v)
    trace.final_residual = ode_residual(y, PantographSpec((1.0,), tuple(atoms)))
    return y, trace


# --------------------------------------------------------------------------
# cross-validation against the averaging-operator solver


@dataclass(frozen=True)
class CrossValidation:
    max_difference: float
    quadrature_budget: float
    voc_trace: IterationTrace
    ae_trace: IterationTrace

    @property
    def agree(self) -> bool:
        return self.max_difference <= 2.0 * self.quadrature_budget

    def to_dict(self) -> dict:
        return {
            "max_difference": self.max_difference,
            "quadrature_budget": self.quadrature_budget,
            "agree": self.agree,
            "voc_iterations": self.voc_trace.iterations,
            "ae_iterations": self.ae_trace.iterations,
            "voc_final_dispersion": self.voc_trace.dispersions[-1],
            "ae_final_dispersion": self.ae_trace.dispersions[-1],
        }


def _voc_step_error(v: np.ndarray, plans) -> float:
    """Linear-interpolation error bound h^2/8 max|phi''| for one step."""
    phi = sum(p * plan.apply(v - v[0]) for p, plan in plans)
    if phi.size < 3:
        return 0.0
    return float(np.max(np.abs(np.diff(phi, 2)))) / 8.0


def cross_validate(
    y0: GridFunction, spec: PantographSpec, max_iter: int = 200, step_tol: float = 1e-12
) -> CrossValidation:
    """Run both first-order solvers and compare their final iterates.

    Each method's one-step quadrature error is estimated on every iterate
    (Richardson for the averaging operator, the interpolation bound for
    variation of constants); the operators are non-expansive, so the sum
    over iterations bounds the accumulated error.
    """
    from .solver import OperatorPlan, QuadratureSettings

    law = pantograph_to_archetypal(spec)
    coarse = OperatorPlan(y0, law, QuadratureSettings(refine=1))
    fine = OperatorPlan(y0, law, QuadratureSettings(refine=2))
    x = y0.x
    plans = [(p, _InterpPlan(y0, a * (x - c))) for a, c, p in spec.atoms]

    yv, tv = picard_variation_of_constants(y0, spec, max_iter, step_tol)
    budget = 0.0
    v = y0.values.copy()
    ae_trace = IterationTrace()
    for _ in range(max_iter):
        nxt = coarse.apply_values(v)
        budget += float(np.max(np.abs(nxt - fine.apply_values(v)))) * 4.0 / 3.0
        budget += _voc_step_error(v, plans)
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        ae_trace.step_norms.append(step)
        ae_trace.dispersions.append(dispersion(y0.with_values(v)))
        if step <= step_tol:
            break
    diff = float(np.max(np.abs(v - yv.values)))
    return CrossValidation(diff, budget, tv, ae_trace)
