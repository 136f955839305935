"""The explicit solution F(x) = P(Upsilon <= x) for supercritical positive laws.

Upsilon = sum_{n>=1} beta_n prod_{j<n} alpha_j^{-1} converges almost surely
when E ln alpha > 0, and its distribution function solves the equation.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import CapExceeded, EmptySample, Inapplicable, RequiresPositiveAlpha
from .laws import CoefficientLaw, Regime, classify_regime, log_scale_moment
from .rng import RngLike, as_generator, chunked_map

DEFAULT_EPS_TAIL = 1e-12
DEFAULT_CAP = 10_000
ESCAPE_LEVEL = 1e6


def check_supercritical(law: CoefficientLaw) -> None:
    if any(at.a <= 0 for at in law.atoms):
        raise RequiresPositiveAlpha("the perpetuity construction needs alpha > 0")
    report = classify_regime(law)
    if report.regime is not Regime.SUPERCRITICAL:
        raise Inapplicable(f"law is {report.regime.value}, not Supercritical")


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class UpsilonDraw:
    value: float
    n_terms: int
    prefactor: float  # first prefactor below eps_tail


@dataclass
class UpsilonSample:
    values: np.ndarray  # truncated paths only
    n_terms: np.ndarray
    prefactors: np.ndarray
    cap_rate: float
    eps_tail: float

    def __len__(self) -> int:
        return self.values.size

    def diagnostics(self) -> dict:
        return {
            "n": int(self.values.size),
            "cap_rate": self.cap_rate,
            "eps_tail": self.eps_tail,
            "max_terms": int(self.n_terms.max()) if self.n_terms.size else 0,
            "mean_terms": float(self.n_terms.mean()) if self.n_terms.size else 0.0,
            "max_prefactor": float(self.prefactors.max()) if self.prefactors.size else 0.0,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "upsilon", "n_terms", "prefactor"])
            for i, (v, n, p) in enumerate(zip(self.values, self.n_terms, self.prefactors)):
                w.writerow([i, repr(float(v)), int(n), repr(float(p))])


def _upsilon_chunk(law, eps_tail, cap, size, gen):
    total = np.zeros(size)
    pref = np.ones(size)
    terms = np.zeros(size, dtype=np.int64)
    done = np.zeros(size, dtype=bool)
    active = np.arange(size)
    for _ in range(cap):
        a, b, _ = law.sample(gen, active.size)
        total[active] += b * pref[active]
        terms[active] += 1
        pref[active] /= a
        fin = pref[active] < eps_tail
        done[active[fin]] = True
        active = active[~fin]
        if active.size == 0:
            break
    return total, terms, pref, done


def sample_upsilon_batch(
    law: CoefficientLaw,
    n: int,
    eps_tail: float = DEFAULT_EPS_TAIL,
    cap: int = DEFAULT_CAP,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> UpsilonSample:
    """``n`` truncated draws of Upsilon; paths that never truncate are dropped."""
    check_supercritical(law)
    parts = chunked_map(lambda size, gen: _upsilon_chunk(law, eps_tail, cap, size, gen), n, rng, threads)
    total = np.concatenate([p[0] for p in parts])
    terms = np.concatenate([p[1] for p in parts])
    pref = np.concatenate([p[2] for p in parts])
    done = np.concatenate([p[3] for p in parts])
    if not done.any():
        raise CapExceeded(f"prefactor stayed above {eps_tail} for {cap} terms on every path")
    return UpsilonSample(total[done], terms[done], pref[done], float(1.0 - done.mean()), eps_tail)


def sample_upsilon(
    law: CoefficientLaw, eps_tail: float = DEFAULT_EPS_TAIL, cap: int = DEFAULT_CAP, rng: RngLike = None
) -> UpsilonDraw:
    check_supercritical(law)
    total, terms, pref, done = _upsilon_chunk(law, eps_tail, cap, 1, as_generator(rng))
    if not done[0]:
        raise CapExceeded(f"prefactor stayed above {eps_tail} for {cap} terms")
    return UpsilonDraw(float(total[0]), int(terms[0]), float(pref[0]))


# --------------------------------------------------------------------------
# empirical distribution function


@dataclass(frozen=True)
class EmpiricalCDF:
    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size == 0:
            raise EmptySample("an empirical CDF needs at least one sample")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.size

    def __call__(self, x):
        return np.searchsorted(self.samples, np.asarray(x, dtype=float), side="right") / self.n

    def ks_distance(self, cdf) -> float:
        """sup_x |F_N(x) - cdf(x)| for a continuous reference ``cdf``."""
        return float(stats.kstest(self.samples, cdf).statistic)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "F"])
            for i, v in enumerate(self.samples, start=1):
                w.writerow([repr(float(v)), repr(i / self.n)])


def build_cdf(samples: Sequence[float]) -> EmpiricalCDF:
    return EmpiricalCDF(np.asarray(samples, dtype=float))


# --------------------------------------------------------------------------
# verification


@dataclass(frozen=True)
class VerificationReport:
    probes: np.ndarray
    residuals: np.ndarray
    stderrs: np.ndarray
    max_residual: float
    stderr: float  # combined standard error at the worst probe
    consistent: bool  # every residual within 5 combined standard errors

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "stderr": self.stderr,
            "consistent": self.consistent,
            "probes": [
                {"probe": float(x), "residual": float(r), "stderr": float(s)}
                for x, r, s in zip(self.probes, self.residuals, self.stderrs)
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def verify_solution(
    F: EmpiricalCDF,
    law: CoefficientLaw,
    probes: Sequence[float],
    n_mc: int = 100_000,
    rng: RngLike = None,
) -> VerificationReport:
    """Compare F(x) with a fresh Monte Carlo average of F(alpha (x - beta)).

    The same ``n_mc`` coefficient draws are used at every probe.  The
    combined error adds the Monte Carlo variance to the binomial variance of
    both sides of the comparison.
    """
    check_supercritical(law)
    gen = as_generator(rng)
    a, b, _ = law.sample(gen, n_mc)
    probes = np.asarray(probes, dtype=float)
    lhs = F(probes)
    res = np.empty(probes.size)
    se = np.empty(probes.size)
    for i, x in enumerate(probes):
        vals = F(a * (x - b))
        res[i] = abs(lhs[i] - vals.mean())
        var_mc = vals.var(ddof=1) / n_mc if n_mc > 1 else 0.0
        se[i] = math.sqrt(var_mc + 2.0 * lhs[i] * (1.0 - lhs[i]) / F.n)
    worst = int(np.argmax(res))
    consistent = bool(np.all(res <= 5.0 * se))
    return VerificationReport(probes, res, se, float(res[worst]), float(se[worst]), consistent)


# --------------------------------------------------------------------------
# escape probability


@dataclass(frozen=True)
class EscapeEstimate:
    probability: float
    stderr: float
    horizon: int
    proxy: bool = True  # finite-horizon stand-in for P_x(X_n -> +inf)

    def to_dict(self) -> dict:
        return {
            "probability": self.probability,
            "stderr": self.stderr,
            "horizon": self.horizon,
            "proxy": self.proxy,
        }


def default_horizon(law: CoefficientLaw) -> int:
    """Smallest n with exp(n K) > 10^6."""
    K = log_scale_moment(law)
    return int(math.floor(math.log(ESCAPE_LEVEL) / K)) + 1


def estimate_escape_probability(
    law: CoefficientLaw,
    x: float,
    b: float = 0.0,
    horizon: Optional[int] = None,
    n_paths: int = 100_000,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> EscapeEstimate:
    """Fraction of chain paths from ``x`` with X_horizon > b."""
    check_supercritical(law)
    horizon = default_horizon(law) if horizon is None else int(horizon)

    def run(size, gen):
        X = np.full(size, float(x))
        for _ in range(horizon):
            a, beta, _ = law.sample(gen, size)
            X = a * (X - beta)
        return X > b

    hits = np.concatenate(chunked_map(run, n_paths, rng, threads))
    p = float(hits.mean())
    se = math.sqrt(p * (1.0 - p) / n_paths) if n_paths > 1 else 0.0
    return EscapeEstimate(p, se, horizon)
