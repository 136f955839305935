"""The associated Markov chain X_n = alpha_n (X_{n-1} - beta_n).

Along a path the explicit iterates ``A_n = prod alpha_k`` and
``D_n = sum_k beta_k prod_{j>=k} alpha_j`` are carried so that
``X_n = A_n x0 - D_n``.  Stopping rules are hitting times of ``A_n``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import AllPathsCapped, RuleUnconstructible
from .laws import CoefficientLaw
from .rng import RngLike, as_generator, chunked_map

DEFAULT_CAP = 100_000
IDENTITY_RTOL = 1e-9
DEBUG = bool(os.environ.get("ARCHETYPAL_DEBUG"))


@dataclass(frozen=True)
class ChainState:
    n: int
    A: float
    D: float
    X: float
    lattice_exp: Optional[int] = None
    sign: Optional[int] = None

    def identity_error(self, x0: float) -> float:
        """Scaled violation of X = A x0 - D."""
        err = abs(self.X - (self.A * x0 - self.D))
        return err / (1.0 + abs(self.A * x0) + abs(self.D))


def initial_state(x0: float, law: Optional[CoefficientLaw] = None) -> ChainState:
    exp = 0 if law is not None and law.q_lattice is not None else None
    sign = 1 if law is not None and has_exact_bookkeeping(law) else None
    return ChainState(0, 1.0, 0.0, float(x0), exp, sign)


def chain_step(state: ChainState, pair: tuple[float, float], m: Optional[int] = None) -> ChainState:
    a, b = pair
    exp = state.lattice_exp
    if exp is not None and m is not None:
        exp = exp + int(m)
    sign = state.sign
    if sign is not None:
        sign = sign * (0 if a == 0 else (1 if a > 0 else -1))
    return ChainState(
        state.n + 1, a * state.A, a * (state.D + b), a * (state.X - b), exp, sign
    )


def has_exact_bookkeeping(law: CoefficientLaw) -> bool:
    return law.q_lattice is not None or law.unit_modulus


# --------------------------------------------------------------------------
# stopping rules


class _Track(NamedTuple):
    n: int
    A: np.ndarray
    logabs: np.ndarray
    S: Optional[np.ndarray]
    sign: np.ndarray


@dataclass(frozen=True)
class HitZero:
    """tau_0 = inf{n >= 1: A_n = 0}."""

    def hit(self, t: _Track) -> np.ndarray:
        return t.sign == 0


@dataclass(frozen=True)
class HitOne:
    """First n >= 1 with A_n = 1 exactly; needs lattice or unit-modulus bookkeeping."""

    requires_exact = True

    def hit(self, t: _Track) -> np.ndarray:
        if t.S is not None:
            return (t.S == 0) & (t.sign > 0)
        return t.sign > 0


@dataclass(frozen=True)
class HitPositive:
    def hit(self, t: _Track) -> np.ndarray:
        return t.sign > 0


@dataclass(frozen=True)
class SmallModulus:
    """First n >= 1 with |A_n| <= exp(-M)."""

    M: float

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("SmallModulus needs M > 0")

    def hit(self, t: _Track) -> np.ndarray:
        return t.logabs <= -self.M


@dataclass(frozen=True)
class LatticeReturn:
    """Return time of the lattice walk S_n = sum m_k to zero."""

    requires_exact = True

    def hit(self, t: _Track) -> np.ndarray:
        if t.S is None:
            return t.sign > 0
        return t.S == 0


@dataclass(frozen=True)
class FixedHorizon:
    """Deterministic time n; turns stopped means into E_x y(X_n)."""

    n: int

    def hit(self, t: _Track) -> np.ndarray:
        return np.full(t.sign.shape, t.n >= self.n)


StoppingRule = Union[HitZero, HitOne, HitPositive, SmallModulus, LatticeReturn, FixedHorizon]


def check_rule(law: CoefficientLaw, rule: StoppingRule) -> None:
    if getattr(rule, "requires_exact", False) and not has_exact_bookkeeping(law):
        raise RuleUnconstructible(
            f"{type(rule).__name__} needs a q_lattice declaration or |alpha| = 1"
        )
    if isinstance(rule, LatticeReturn) and law.q_lattice is None:
        raise RuleUnconstructible("LatticeReturn needs a q_lattice declaration")


def default_modulus_level(x: float, dx: float) -> float:
    """Smallest M with |x| exp(-M) < dx."""
    if x == 0:
        return 1.0
    return max(math.log(abs(x) / dx), 0.0) + 1.0


# --------------------------------------------------------------------------
# single path


@dataclass(frozen=True)
class StoppedOutcome:
    state: ChainState
    status: str  # "Stopped" | "CapExceeded"
    cap: int

    @property
    def stopped(self) -> bool:
        return self.status == "Stopped"


def _track_of(state: ChainState, law: CoefficientLaw, logabs: float) -> _Track:
    S = None if state.lattice_exp is None else np.array([state.lattice_exp])
    sign = state.sign
    if sign is None:
        sign = 0 if state.A == 0 else (1 if state.A > 0 else -1)
    return _Track(state.n, np.array([state.A]), np.array([logabs]), S, np.array([sign]))


def run_until(
    law: CoefficientLaw, x0: float, rule: StoppingRule, cap: int = DEFAULT_CAP, rng: RngLike = None
) -> StoppedOutcome:
    check_rule(law, rule)
    gen = as_generator(rng)
    state = initial_state(x0, law)
    if state.sign is None:
        state = replace(state, sign=1)
    m = law.m
    logq = math.log(law.q_lattice.q) if law.q_lattice else None
    logabs = 0.0
    for _ in range(cap):
        a, b, idx = law.sample(gen, 1)
        a, b, i = float(a[0]), float(b[0]), int(idx[0])
        state = chain_step(state, (a, b), None if m is None else int(m[i]))
        if logq is not None:
            logabs = state.lattice_exp * logq
        else:
            logabs += math.log(abs(a)) if a != 0 else -math.inf
        if DEBUG:
            assert state.identity_error(x0) <= IDENTITY_RTOL
        if rule.hit(_track_of(state, law, logabs))[0]:
            return StoppedOutcome(state, "Stopped", cap)
    return StoppedOutcome(state, "CapExceeded", cap)


# --------------------------------------------------------------------------
# many paths


@dataclass
class PathBatch:
    tau: np.ndarray  # stopping index, or cap for capped paths
    A: np.ndarray
    D: np.ndarray
    X: np.ndarray
    stopped: np.ndarray
    x0: float
    cap: int

    def __len__(self) -> int:
        return len(self.tau)

    @property
    def cap_rate(self) -> float:
        return float(1.0 - self.stopped.mean()) if len(self) else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "tau", "A_tau", "D_tau", "X_tau", "status"])
            for i in range(len(self)):
                w.writerow(
                    [
                        i,
                        int(self.tau[i]),
                        repr(float(self.A[i])),
                        repr(float(self.D[i])),
                        repr(float(self.X[i])),
                        "Stopped" if self.stopped[i] else "CapExceeded",
                    ]
                )


def _simulate_chunk(law, x0, rule, cap, size, gen) -> PathBatch:
    A = np.ones(size)
    D = np.zeros(size)
    X = np.full(size, float(x0))
    logabs = np.zeros(size)
    sign = np.ones(size, dtype=np.int8)
    m = law.m
    S = np.zeros(size, dtype=np.int64) if m is not None else None
    logq = math.log(law.q_lattice.q) if m is not None else 0.0
    tau = np.full(size, cap, dtype=np.int64)
    stopped = np.zeros(size, dtype=bool)
    active = np.arange(size)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in range(1, cap + 1):
            a, b, idx = law.sample(gen, active.size)
            A[active] *= a
            D[active] = a * (D[active] + b)
            X[active] = a * (X[active] - b)
            sign[active] *= np.sign(a).astype(np.int8)
            if S is not None:
                S[active] += m[idx]
                logabs[active] = S[active] * logq
            else:
                logabs[active] += np.log(np.abs(a))
            if DEBUG:
                err = np.abs(X[active] - (A[active] * x0 - D[active]))
                scale = 1.0 + np.abs(A[active] * x0) + np.abs(D[active])
                fin = np.isfinite(err)
                assert np.all(err[fin] <= IDENTITY_RTOL * scale[fin])
            track = _Track(
                n,
                A[active],
                logabs[active],
                None if S is None else S[active],
                sign[active],
            )
            hit = rule.hit(track)
            if hit.any():
                done = active[hit]
                tau[done] = n
                stopped[done] = True
                active = active[~hit]
            if active.size == 0:
                break
    return PathBatch(tau, A, D, X, stopped, float(x0), cap)


def simulate_paths(
    law: CoefficientLaw,
    x0: float,
    rule: StoppingRule,
    n_paths: int,
    cap: int = DEFAULT_CAP,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> PathBatch:
    check_rule(law, rule)
    parts = chunked_map(
        lambda size, gen: _simulate_chunk(law, x0, rule, cap, size, gen), n_paths, rng, threads
    )
    return PathBatch(
        np.concatenate([p.tau for p in parts]),
        np.concatenate([p.A for p in parts]),
        np.concatenate([p.D for p in parts]),
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.stopped for p in parts]),
        float(x0),
        cap,
    )


class MeanEstimate(NamedTuple):
    estimate: float
    stderr: float
    cap_rate: float


class ShiftSample(NamedTuple):
    values: np.ndarray
    cap_rate: float


def sample_mean(values: np.ndarray) -> tuple[float, float]:
    """Mean and standard error, shifted by the first value so constants are exact."""
    values = np.asarray(values, dtype=float)
    ref = values[0]
    dev = values - ref
    est = ref + dev.mean()
    se = float(dev.std(ddof=1) / math.sqrt(len(dev))) if len(dev) > 1 else 0.0
    return float(est), se


def stopped_mean(
    y: Callable[[np.ndarray], np.ndarray],
    law: CoefficientLaw,
    x: float,
    rule: StoppingRule,
    n_paths: int,
    cap: int = DEFAULT_CAP,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> MeanEstimate:
    """Monte Carlo estimate of E_x y(X_tau); capped paths are excluded."""
    batch = simulate_paths(law, x, rule, n_paths, cap, rng, threads)
    if not batch.stopped.any():
        raise AllPathsCapped(f"no path stopped within {cap} steps")
    vals = np.asarray(y(batch.X[batch.stopped]), dtype=float)
    est, se = sample_mean(vals)
    return MeanEstimate(est, se, batch.cap_rate)


def sample_stopped_shift(
    law: CoefficientLaw,
    rule: StoppingRule,
    n_paths: int,
    cap: int = DEFAULT_CAP,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> ShiftSample:
    batch = simulate_paths(law, 0.0, rule, n_paths, cap, rng, threads)
    if not batch.stopped.any():
        raise AllPathsCapped(f"no path stopped within {cap} steps")
    return ShiftSample(batch.D[batch.stopped], batch.cap_rate)


def tau_distribution(
    law: CoefficientLaw,
    rule: StoppingRule,
    n_paths: int,
    cap: int = DEFAULT_CAP,
    rng: RngLike = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    """Empirical pmf of the stopping index; entry ``n`` is P(tau = n), entry 0 unused.

    Normalised over stopped paths, so it sums to 1 whenever any path stops.
    """
    batch = simulate_paths(law, 0.0, rule, n_paths, cap, rng, threads)
    counts = np.bincount(batch.tau[batch.stopped], minlength=cap + 1).astype(float)
    total = counts.sum()
    return counts / total if total else counts
