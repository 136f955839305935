"""Coefficient laws mu of the random pair (alpha, beta).

``alpha`` is discrete: a law is a finite list of atoms ``(a, p, shift)``
where ``shift`` is the conditional law of ``beta`` given ``alpha = a``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import DegenerateZero, InvalidLaw
from .rng import RngLike, as_generator

PROB_TOL = 1e-12
LATTICE_TOL = 1e-12
RESONANCE_TOL = 1e-9
DEFAULT_TOL_K = 1e-9
HYPOEXP_MOMENT_SAMPLES = 100_000


# --------------------------------------------------------------------------
# shift laws


@dataclass(frozen=True)
class PointMass:
    b: float

    continuous = False

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.b))

    def support(self, tail_tol: float = 1e-10) -> tuple[float, float]:
        return (self.b, self.b)

    def mean(self) -> float:
        return float(self.b)

    def log_moment(self) -> float:
        return math.log(max(abs(self.b), 1.0))


@dataclass(frozen=True)
class ExponentialFrom:
    """Unit exponential law on ``(c, inf)``: density ``exp(c - t)``."""

    c: float

    continuous = True

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.c + rng.standard_exponential(size)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= self.c, np.exp(np.minimum(self.c - t, 0.0)), 0.0)

    def support(self, tail_tol: float = 1e-10) -> tuple[float, float]:
        return (self.c, self.c + math.log(1.0 / tail_tol))

    def mean(self) -> float:
        return self.c + 1.0

    def log_moment(self) -> float:
        # E ln max(|c + eta|, 1), split into the regions t > 1 and t < -1
        c = float(self.c)
        total = 0.0
        lo = max(c, 1.0)
        # int_lo^inf ln t e^{c-t} dt = e^{c-lo} ln lo + e^c E1(lo)
        total += math.exp(c - lo) * math.log(lo) + math.exp(c) * special.exp1(lo)
        if c < -1.0:
            # int_c^{-1} ln(-t) e^{c-t} dt = e^c [e^s ln s - Ei(s)]_{s=1}^{|c|}
            s = -c
            total += math.log(s) - math.exp(c) * (special.expi(s) - special.expi(1.0))
        return float(total)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    continuous = True

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidLaw(f"Uniform requires lo < hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.lo) & (t <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def support(self, tail_tol: float = 1e-10) -> tuple[float, float]:
        return (self.lo, self.hi)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def log_moment(self) -> float:
        def prim(t: float) -> float:
            # antiderivative of ln max(|t|, 1), odd in t
            u = abs(t)
            if u <= 1.0:
                return 0.0
            return math.copysign(u * math.log(u) - u + 1.0, t)

        return (prim(self.hi) - prim(self.lo)) / (self.hi - self.lo)


@dataclass(frozen=True)
class PointPlusHypoexp:
    """``c + sum_j eta_j / kappa_j`` with independent standard exponentials."""

    c: float
    kappas: tuple[float, ...]

    continuous = True

    def __post_init__(self):
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        if not self.kappas:
            raise InvalidLaw("PointPlusHypoexp needs at least one kappa")
        if any(k == 0.0 for k in self.kappas):
            raise InvalidLaw("every kappa must be nonzero")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        inv = 1.0 / np.asarray(self.kappas)
        eta = rng.standard_exponential((size, len(inv)))
        return self.c + eta @ inv

    def density(self, t):
        from .pantograph import xi_density

        return xi_density(self.kappas, np.asarray(t, dtype=float) - self.c)

    def support(self, tail_tol: float = 1e-10) -> tuple[float, float]:
        from .pantograph import xi_support

        lo, hi = xi_support(self.kappas, tail_tol)
        return (self.c + lo, self.c + hi)

    def mean(self) -> float:
        return self.c + sum(1.0 / k for k in self.kappas)

    def log_moment(self, rng: RngLike = 0) -> float:
        x = self.sample(as_generator(rng), HYPOEXP_MOMENT_SAMPLES)
        return float(np.mean(np.log(np.maximum(np.abs(x), 1.0))))


ShiftLaw = Union[PointMass, ExponentialFrom, Uniform, PointPlusHypoexp]

SHIFT_KINDS = {
    "point": PointMass,
    "exponential_from": ExponentialFrom,
    "uniform": Uniform,
    "point_plus_hypoexp": PointPlusHypoexp,
}


def shift_from_dict(d: dict) -> ShiftLaw:
    kind = d["kind"]
    params = dict(d.get("params", {}))
    if kind not in SHIFT_KINDS:
        raise InvalidLaw(f"unknown shift kind {kind!r}")
    if kind == "point_plus_hypoexp":
        params["kappas"] = tuple(params["kappas"])
    return SHIFT_KINDS[kind](**params)


def shift_to_dict(s: ShiftLaw) -> dict:
    kind = {v: k for k, v in SHIFT_KINDS.items()}[type(s)]
    params = {k: getattr(s, k) for k in s.__dataclass_fields__}
    if "kappas" in params:
        params["kappas"] = list(params["kappas"])
    return {"kind": kind, "params": params}


# --------------------------------------------------------------------------
# coefficient law


@dataclass(frozen=True)
class Atom:
    a: float
    p: float
    shift: ShiftLaw


@dataclass(frozen=True)
class QLattice:
    q: float
    m: tuple[int, ...]


@dataclass(frozen=True)
class CoefficientLaw:
    atoms: tuple[Atom, ...]
    q_lattice: Optional[QLattice] = None
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(
            at if isinstance(at, Atom) else Atom(float(at[0]), float(at[1]), at[2])
            for at in self.atoms
        )
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise InvalidLaw("a law needs at least one atom")
        for at in atoms:
            if not (0.0 < at.p <= 1.0):
                raise InvalidLaw(f"atom probability {at.p} outside (0, 1]")
            if not math.isfinite(at.a):
                raise InvalidLaw("atom scaling values must be finite")
        if abs(math.fsum(at.p for at in atoms) - 1.0) > PROB_TOL:
            raise InvalidLaw("atom probabilities must sum to 1")
        if self.q_lattice is not None:
            ql = self.q_lattice
            if not isinstance(ql, QLattice):
                ql = QLattice(float(ql[0]), tuple(int(v) for v in ql[1]))
                object.__setattr__(self, "q_lattice", ql)
            else:
                object.__setattr__(
                    self, "q_lattice", QLattice(float(ql.q), tuple(int(v) for v in ql.m))
                )
                ql = self.q_lattice
            if not ql.q > 1.0:
                raise InvalidLaw("q_lattice requires q > 1")
            if len(ql.m) != len(atoms):
                raise InvalidLaw("q_lattice.m must list one exponent per atom")
            for at, m in zip(atoms, ql.m):
                if abs(at.a - ql.q**m) > LATTICE_TOL * abs(at.a):
                    raise InvalidLaw(f"atom a={at.a} differs from q^{m}")
        cum = np.cumsum([at.p for at in atoms])
        cum[-1] = 1.0
        object.__setattr__(self, "_cum", cum)

    @property
    def a(self) -> np.ndarray:
        return np.array([at.a for at in self.atoms])

    @property
    def p(self) -> np.ndarray:
        return np.array([at.p for at in self.atoms])

    @property
    def m(self) -> Optional[np.ndarray]:
        return None if self.q_lattice is None else np.array(self.q_lattice.m, dtype=np.int64)

    @property
    def unit_modulus(self) -> bool:
        return all(abs(at.a) == 1.0 for at in self.atoms)

    @property
    def point_shifts_only(self) -> bool:
        return all(isinstance(at.shift, PointMass) for at in self.atoms)

    def sample(self, rng: np.random.Generator, size: int):
        """Draw ``size`` pairs; returns ``(a, b, atom_index)`` arrays."""
        idx = np.searchsorted(self._cum, rng.random(size), side="right")
        np.minimum(idx, len(self.atoms) - 1, out=idx)
        a = self.a[idx]
        b = np.empty(size)
        for i, at in enumerate(self.atoms):
            sel = idx == i
            k = int(sel.sum())
            if k:
                b[sel] = at.shift.sample(rng, k)
        return a, b, idx

    def to_dict(self) -> dict:
        out = {
            "atoms": [
                {"a": at.a, "p": at.p, "shift": shift_to_dict(at.shift)} for at in self.atoms
            ]
        }
        if self.q_lattice is not None:
            out["q_lattice"] = {"q": self.q_lattice.q, "m": list(self.q_lattice.m)}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientLaw":
        atoms = tuple(
            Atom(float(x["a"]), float(x["p"]), shift_from_dict(x["shift"])) for x in d["atoms"]
        )
        ql = d.get("q_lattice")
        if ql is not None:
            ql = QLattice(float(ql["q"]), tuple(int(v) for v in ql["m"]))
        return cls(atoms, ql)


def discrete_law(
    triples: Sequence[tuple[float, float, float]], q_lattice=None
) -> CoefficientLaw:
    """Law with point-mass shifts from ``(a, p, b)`` triples."""
    return CoefficientLaw(tuple(Atom(a, p, PointMass(b)) for a, p, b in triples), q_lattice)


def sample_pair(law: CoefficientLaw, rng: RngLike) -> tuple[float, float]:
    a, b, _ = law.sample(as_generator(rng), 1)
    return float(a[0]), float(b[0])


def _as_fraction(x: float) -> Fraction:
    f = Fraction(x).limit_denominator(10**9)
    return f if abs(float(f) - x) <= 1e-15 else Fraction(x)


def lattice_drift(law: CoefficientLaw) -> Fraction:
    """``sum p_i m_i`` in exact rational arithmetic."""
    if law.q_lattice is None:
        raise InvalidLaw("law has no q_lattice declaration")
    return sum(
        (_as_fraction(at.p) * m for at, m in zip(law.atoms, law.q_lattice.m)), Fraction(0)
    )


def log_scale_moment(law: CoefficientLaw) -> float:
    """K = E ln|alpha|."""
    if any(at.a == 0.0 for at in law.atoms):
        raise DegenerateZero("E ln|alpha| is undefined when P(alpha = 0) > 0")
    if law.q_lattice is not None:
        return float(lattice_drift(law)) * math.log(law.q_lattice.q)
    return math.fsum(at.p * math.log(abs(at.a)) for at in law.atoms)


# --------------------------------------------------------------------------
# degeneracies and regimes


@dataclass(frozen=True)
class Degeneracies:
    p_zero: float
    p_unit_modulus: float
    resonance: Optional[float]


def fixed_point_of_atom(a: float, b: float) -> Optional[float]:
    """The value rho with a(rho - b) = rho; ``None`` if every c works, inf if none."""
    if a == 1.0:
        return None if b == 0.0 else math.inf
    if a == 0.0:
        return 0.0
    return b / (1.0 - 1.0 / a)


def detect_degeneracies(law: CoefficientLaw, tol: float = RESONANCE_TOL) -> Degeneracies:
    p_zero = math.fsum(at.p for at in law.atoms if at.a == 0.0)
    p_unit = math.fsum(at.p for at in law.atoms if abs(at.a) == 1.0)
    return Degeneracies(p_zero, p_unit, find_resonance(law, tol))


def find_resonance(law: CoefficientLaw, tol: float = RESONANCE_TOL) -> Optional[float]:
    rhos = []
    for at in law.atoms:
        if at.shift.continuous:
            return None
        rho = fixed_point_of_atom(at.a, at.shift.b)
        if rho is None:
            continue
        if math.isinf(rho):
            return None
        rhos.append(rho)
    if not rhos:
        return 0.0
    c = rhos[0]
    if all(abs(r - c) <= tol * max(1.0, abs(c)) for r in rhos):
        return c
    return None


class Regime(str, enum.Enum):
    DEGENERATE_ZERO = "DegenerateZero"
    DEGENERATE_UNIT_MODULUS = "DegenerateUnitModulus"
    RESONANT = "Resonant"
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


@dataclass(frozen=True)
class RegimeReport:
    p_zero: float
    p_unit_modulus: float
    resonance: Optional[float]
    K: Optional[float]
    log_beta_moment: float
    log_beta_moment_finite: bool
    regime: Regime
    tol_K: float

    def to_dict(self) -> dict:
        return {
            "p_zero": self.p_zero,
            "p_unit_modulus": self.p_unit_modulus,
            "resonance": self.resonance,
            "K": self.K,
            "log_beta_moment": self.log_beta_moment,
            "log_beta_moment_finite": self.log_beta_moment_finite,
            "regime": self.regime.value,
            "tol_K": self.tol_K,
        }


def log_beta_moment(law: CoefficientLaw, rng: RngLike = 0) -> tuple[float, bool]:
    """Estimate of E ln max(|beta|, 1) and a finiteness flag.

    Every shift variant has exponential or bounded tails, so the flag is
    always true; it is kept so callers can treat the value uniformly.
    """
    total = 0.0
    for at in law.atoms:
        if isinstance(at.shift, PointPlusHypoexp):
            total += at.p * at.shift.log_moment(rng)
        else:
            total += at.p * at.shift.log_moment()
    return total, math.isfinite(total)


def classify_regime(
    law: CoefficientLaw, tol_K: float = DEFAULT_TOL_K, rng: RngLike = 0
) -> RegimeReport:
    deg = detect_degeneracies(law)
    lbm, finite = log_beta_moment(law, rng)
    K = None if deg.p_zero > 0 else log_scale_moment(law)
    if deg.p_zero > 0:
        regime = Regime.DEGENERATE_ZERO
    elif abs(deg.p_unit_modulus - 1.0) <= PROB_TOL:
        regime = Regime.DEGENERATE_UNIT_MODULUS
    elif deg.resonance is not None:
        regime = Regime.RESONANT
    elif abs(K) <= tol_K:
        regime = Regime.CRITICAL
    elif K < 0:
        regime = Regime.SUBCRITICAL
    else:
        regime = Regime.SUPERCRITICAL
    return RegimeReport(
        deg.p_zero, deg.p_unit_modulus, deg.resonance, K, lbm, finite, regime, tol_K
    )
