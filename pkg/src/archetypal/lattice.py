"""Arithmetic spans, the |alpha| = 1 case split, and q-lattice analysis.

Spans of real numbers are found by a tolerant Euclidean reduction.  For
laws with a_i = q^{m_i} and zero drift, the report exhibits the explicit
support points theta_n of the return-time shift, which accumulate at
rho_1 - rho_l and therefore witness a non-arithmetic distribution.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np

from .chain import LatticeReturn, sample_stopped_shift
from .errors import AllResonant, Inapplicable, NotCritical
from .laws import CoefficientLaw, PointMass, fixed_point_of_atom, lattice_drift
from .rng import RngLike

SPAN_TOL = 1e-9
MAX_ROUNDS = 64
K_BOUND = 12
WITNESS_EPS = 1e-3


def _jsonable(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    return v


# --------------------------------------------------------------------------
# spans


@dataclass(frozen=True)
class SpanReport:
    arithmetic: bool
    lam: Optional[float] = None
    lam0: Optional[float] = None
    degenerate: bool = False
    tol: float = SPAN_TOL
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "arithmetic": self.arithmetic,
            "lambda": self.lam,
            "lambda0": self.lam0,
            "degenerate": self.degenerate,
            "tol": self.tol,
            "note": self.note,
        }


def _tolerant_gcd(a: float, b: float, tol: float, rounds: list) -> float:
    a, b = max(a, b), min(a, b)
    while b > tol:
        rounds[0] += 1
        if rounds[0] > MAX_ROUNDS:
            return 0.0
        r = math.fmod(a, b)
        if b - r <= tol:
            r = 0.0
        a, b = b, r
    return a


def real_gcd_span(values: Sequence[float], tol: float = SPAN_TOL) -> SpanReport:
    """Largest lambda with every value in lambda * Z, up to ``tol``.

    The reduction is declared non-arithmetic when it needs more than
    ``MAX_ROUNDS`` Euclidean steps, or when the candidate span is so fine
    that the largest value is more than 1/sqrt(tol) multiples of it; at
    that resolution every finite set would pass the membership test.
    """
    vals = np.abs(np.asarray(values, dtype=float).ravel())
    if vals.size == 0:
        raise ValueError("span of an empty list")
    nz = np.unique(vals[vals > tol])
    if nz.size == 0:
        return SpanReport(False, degenerate=True, tol=tol)
    g = float(nz[0])
    rounds = [0]
    for v in nz[1:]:
        g = _tolerant_gcd(g, float(v), tol, rounds)
        if g <= tol:
            return SpanReport(False, tol=tol)
    if nz[-1] / g > 1.0 / math.sqrt(tol):
        return SpanReport(False, tol=tol)
    mult = nz / g
    if np.max(np.abs(mult - np.rint(mult)) * g) > tol * max(1.0, float(nz[-1])):
        return SpanReport(False, tol=tol)
    return SpanReport(True, g, tol=tol)


def coset_offset(values: Sequence[float], lam: float, tol: float = SPAN_TOL) -> Optional[float]:
    """lambda0 in [0, lambda) with every value in lambda0 + lambda Z, if one exists."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    vals = np.asarray(values, dtype=float).ravel()
    r0 = math.fmod(float(vals[0]), lam)
    if r0 < 0:
        r0 += lam
    if lam - r0 <= tol:
        r0 = 0.0
    d = (vals - r0) / lam
    if np.max(np.abs(d - np.rint(d))) * lam > tol * max(1.0, float(np.max(np.abs(vals)))):
        return None
    return r0


# --------------------------------------------------------------------------
# |alpha| = 1


@dataclass(frozen=True)
class UnitModulusReport:
    case: str  # "a" | "b-i" | "b-ii"
    lam: Optional[float]
    lam0: Optional[float]
    x0: Optional[float]
    plus_span: SpanReport
    flags: tuple[str, ...] = ()

    @property
    def constants_only(self) -> bool:
        return self.case in ("a", "b-i")

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "lambda": self.lam,
            "lambda0": self.lam0,
            "x0": self.x0,
            "constants_only": self.constants_only,
            "plus_span": self.plus_span.to_dict(),
            "flags": list(self.flags),
        }


def classify_unit_modulus(law: CoefficientLaw, tol: float = SPAN_TOL) -> UnitModulusReport:
    if not law.unit_modulus:
        raise Inapplicable("classification needs |alpha| = 1 on every atom")
    plus = [at.shift for at in law.atoms if at.a == 1.0]
    minus = [at.shift for at in law.atoms if at.a == -1.0]
    if not minus:
        raise Inapplicable("classification needs P(alpha = 1) < 1")
    flags = []
    if not plus:
        plus = [PointMass(0.0)]
        flags.append("alpha identically -1: beta+ set to 0")

    def _report(case, lam=None, lam0=None, span=None):
        x0 = None if lam is None or lam0 is None else 0.5 * lam0 / lam
        return UnitModulusReport(case, lam, lam0, x0, span, tuple(flags))

    if any(s.continuous for s in plus):
        return _report("a", span=SpanReport(False, tol=tol, note="continuous beta+"))
    span = real_gcd_span([s.b for s in plus], tol)
    minus_continuous = any(s.continuous for s in minus)
    minus_values = [] if minus_continuous else [s.b for s in minus]

    if span.degenerate:
        # beta+ = 0 lies in every lattice; lambda comes from beta- differences
        flags.append("beta+ degenerate at 0: lambda taken from beta- differences")
        if minus_continuous:
            return _report("b-i", span=span)
        diffs = [u - v for u, v in itertools.combinations(minus_values, 2)]
        dspan = real_gcd_span(diffs or [0.0], tol)
        if dspan.degenerate:
            flags.append("single beta- value: every period works, symmetry about b/2 only")
            return UnitModulusReport(
                "b-ii", None, None, 0.5 * minus_values[0], span, tuple(flags)
            )
        if not dspan.arithmetic:
            return _report("b-i", span=span)
        lam = dspan.lam
        return _report("b-ii", lam, coset_offset(minus_values, lam, tol), span)

    if not span.arithmetic:
        return _report("a", span=span)
    lam = span.lam
    if minus_continuous:
        return _report("b-i", lam, span=span)
    lam0 = coset_offset(minus_values, lam, tol)
    if lam0 is None:
        return _report("b-i", lam, span=span)
    return _report("b-ii", lam, lam0, span)


def build_symmetric_solution(
    g0: Callable[[np.ndarray], np.ndarray], lam: float, lam0: float
) -> Callable[[np.ndarray], np.ndarray]:
    """y(x) = g(x / lam) with g(u) = g0(u - x0) + g0(x0 - u), x0 = lam0 / (2 lam)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    x0 = 0.5 * lam0 / lam

    def y(x):
        u = np.asarray(x, dtype=float) / lam
        return np.asarray(g0(u - x0), dtype=float) + np.asarray(g0(x0 - u), dtype=float)

    return y


# --------------------------------------------------------------------------
# q-lattice laws


def lattice_rho(law: CoefficientLaw) -> list[Optional[float]]:
    """rho_i = b_i / (1 - 1/a_i); inf when a_i = 1 and b_i != 0, None for (1, 0)."""
    rho = [fixed_point_of_atom(at.a, at.shift.b) for at in law.atoms]
    return [None if r is None else r + 0.0 for r in rho]


def _choose_pair(m, rho) -> tuple[int, int]:
    for i in range(len(m)):
        if m[i] <= 0:
            continue
        for j in range(len(m)):
            if m[j] < 0 and rho[i] != rho[j]:
                return i, j
    raise Inapplicable("no atoms with m > 0 > m' and distinct rho")


def find_k(m: Sequence[int], i_star: int, j_star: int, bound: int = K_BOUND) -> list[int]:
    """Nonnegative k with k.m = 0 and k at both pivots >= 1, smallest total first.

    Atoms with m = 0 get k = 0.  Falls back to the two-atom witness
    k_i* = |m_j*| / g, k_j* = m_i* / g if the bounded search is too large.
    """
    m = list(m)
    live = [i for i in range(len(m)) if m[i] != 0]
    best = None
    if (bound + 1) ** len(live) <= 2_000_000:
        grid = np.indices((bound + 1,) * len(live)).reshape(len(live), -1).T
        pi, pj = live.index(i_star), live.index(j_star)
        ok = (grid[:, pi] >= 1) & (grid[:, pj] >= 1) & (grid @ np.array([m[i] for i in live]) == 0)
        cand = grid[ok]
        if cand.size:
            # smallest total, ties to larger k on earlier atoms
            keys = [-cand[:, c] for c in range(len(live) - 1, -1, -1)] + [cand.sum(axis=1)]
            pick = cand[np.lexsort(keys)[0]]
            best = dict(zip(live, (int(v) for v in pick)))
    if best is None:
        g = math.gcd(m[i_star], -m[j_star])
        k = {i_star: -m[j_star] // g, j_star: m[i_star] // g}
    else:
        k = best
    return [k.get(i, 0) for i in range(len(m))]


def relabel(m: Sequence[int], k: Sequence[int], i_star: int, j_star: int) -> list[int]:
    """Atom order used for theta: i* first, j* last, the rest by descending m."""
    rest = [i for i in range(len(m)) if k[i] > 0 and i not in (i_star, j_star)]
    rest.sort(key=lambda i: (-m[i], i))
    return [i_star] + rest + [j_star]


def theta_direct(q: float, m, k, rho, n: int, dps: int = 50) -> float:
    """sum_i rho_i (1 - a_i^{-n k_i}) prod_{j<i} a_j^{-n k_j} in high precision."""
    with mpmath.workdps(dps):
        qq = mpmath.mpf(q)
        total = mpmath.mpf(0)
        pref = mpmath.mpf(1)
        for mi, ki, ri in zip(m, k, rho):
            step = qq ** (-n * ki * mi)
            total += mpmath.mpf(ri) * (1 - step) * pref
            pref *= step
        return float(total)


def theta_telescoped(q: float, s, rho, n: int) -> float:
    """rho_1 + sum_i (rho_{i+1} - rho_i) q^{-n s_i} - rho_l."""
    out = rho[0] - rho[-1]
    for i, si in enumerate(s):
        out += (rho[i + 1] - rho[i]) * q ** (-n * si)
    return out


def block_path_shift(law: CoefficientLaw, order: Sequence[int], k: Sequence[int], n: int) -> float:
    """D at the end of the deterministic path: n k_i steps of atom i, in ``order``."""
    D = 0.0
    for i in order:
        at = law.atoms[i]
        for _ in range(n * k[i]):
            D = at.a * (D + at.shift.b)
    return D


@dataclass
class QLatticeReport:
    critical: bool
    drift: str
    rho: list
    resonant: Optional[float]
    k: list = field(default_factory=list)
    order: list = field(default_factory=list)
    s: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    theta_telescoped: list = field(default_factory=list)
    theta_max_rel_discrepancy: Optional[float] = None
    theta_limit: Optional[float] = None
    theta_limit_bound: Optional[float] = None
    witness: Optional[dict] = None
    empirical_span: Optional[SpanReport] = None
    cap_rate: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "critical": self.critical,
            "drift": self.drift,
            "rho": [_jsonable(r) for r in self.rho],
            "resonant": self.resonant,
            "k": self.k,
            "order": self.order,
            "s": self.s,
            "theta": self.theta,
            "theta_telescoped": self.theta_telescoped,
            "theta_max_rel_discrepancy": self.theta_max_rel_discrepancy,
            "theta_limit": self.theta_limit,
            "theta_limit_bound": self.theta_limit_bound,
            "witness": self.witness,
            "empirical_span": None if self.empirical_span is None else self.empirical_span.to_dict(),
            "cap_rate": self.cap_rate,
        }


def theta_sequence(law: CoefficientLaw, n_theta: int):
    """(k, order, s, theta_direct, theta_telescoped) for a critical lattice law.

    Raises AllResonant when every rho_i coincides.
    """
    ql = law.q_lattice
    rho = lattice_rho(law)
    finite = [r for r in rho if r is not None]
    if finite and not any(math.isinf(r) for r in finite) and max(finite) - min(finite) <= 1e-9 * max(
        1.0, max(abs(r) for r in finite)
    ):
        raise AllResonant(finite[0])
    m = list(ql.m)
    i_star, j_star = _choose_pair(m, rho)
    k = find_k(m, i_star, j_star)
    order = relabel(m, k, i_star, j_star)
    mo = [m[i] for i in order]
    ko = [k[i] for i in order]
    ro = [rho[i] for i in order]
    s = list(itertools.accumulate(ki * mi for ki, mi in zip(ko, mo)))[:-1]
    direct = [theta_direct(ql.q, mo, ko, ro, n) for n in range(1, n_theta + 1)]
    tele = [theta_telescoped(ql.q, s, ro, n) for n in range(1, n_theta + 1)]
    return k, order, s, direct, tele, ro


def q_lattice_report(
    law: CoefficientLaw,
    n_theta: int = 50,
    n_paths: int = 0,
    cap: int = 10_000,
    rng: RngLike = None,
    span_tol: float = SPAN_TOL,
) -> QLatticeReport:
    if law.q_lattice is None:
        raise Inapplicable("law has no q_lattice declaration")
    if not law.point_shifts_only:
        raise Inapplicable("q-lattice analysis needs point-mass shifts")
    drift = lattice_drift(law)
    if drift != 0:
        raise NotCritical(f"sum p_i m_i = {drift} is not zero")
    rho = lattice_rho(law)
    rep = QLatticeReport(True, str(Fraction(drift)), rho, None)
    try:
        k, order, s, direct, tele, ro = theta_sequence(law, n_theta)
    except AllResonant as exc:
        rep.resonant = exc.c
        return rep
    rep.k, rep.order, rep.s = k, order, s
    rep.theta, rep.theta_telescoped = direct, tele
    rep.theta_max_rel_discrepancy = max(
        abs(d - t) / max(1.0, abs(d)) for d, t in zip(direct, tele)
    )
    rep.theta_limit = ro[0] - ro[-1]
    q = law.q_lattice.q
    rep.theta_limit_bound = sum(abs(ro[i + 1] - ro[i]) for i in range(len(s))) * q ** (
        -n_theta * min(s)
    )
    rep.witness = non_arithmetic_witness(direct)
    if n_paths > 0:
        sample = sample_stopped_shift(law, LatticeReturn(), n_paths, cap, rng)
        rep.empirical_span = real_gcd_span(sample.values, span_tol)
        rep.cap_rate = sample.cap_rate
    return rep


def non_arithmetic_witness(theta: Sequence[float], eps: float = WITNESS_EPS) -> Optional[dict]:
    """First pair n < n' with 0 < |theta_n - theta_n'| < eps, scanning n' upward."""
    for j in range(1, len(theta)):
        for i in range(j):
            gap = abs(theta[j] - theta[i])
            if 0.0 < gap < eps:
                return {"n": i + 1, "n_prime": j + 1, "gap": gap}
    return None
