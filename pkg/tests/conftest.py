import math
from fractions import Fraction

import numpy as np
import pytest

from archetypal.laws import Atom, CoefficientLaw, ExponentialFrom, discrete_law

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def bernoulli():
    return discrete_law([(2.0, 0.5, 1.0), (2.0, 0.5, -1.0)])


@pytest.fixture
def mirror_periodic():
    return discrete_law([(-1.0, 1 / 3, 1.0), (-1.0, 2 / 3, -1.0)])


@pytest.fixture
def mirror_exponential():
    return CoefficientLaw((Atom(-1.0, 1.0, ExponentialFrom(0.0)),))


@pytest.fixture
def canonical_lattice():
    return discrete_law([(2.0, 0.5, 1.0), (0.5, 0.5, 0.0)], q_lattice=(2.0, (1, -1)))


@pytest.fixture
def resonant_lattice():
    return discrete_law([(2.0, 0.5, 0.5), (0.5, 0.5, -1.0)], q_lattice=(2.0, (1, -1)))


def cos2pi(x):
    return 2.0 * np.cos(2.0 * math.pi * np.asarray(x))


def random_critical_lattice(rng):
    """Mixture of two-atom critical blocks with exact rational probabilities."""
    q = float(rng.choice([2.0, 3.0, 1.5]))
    n_blocks = int(rng.integers(1, 3))
    weights = rng.integers(1, 4, size=n_blocks)
    weights = [Fraction(int(w), int(sum(weights))) for w in weights]
    atoms = {}
    for w in weights:
        up, down = int(rng.integers(1, 4)), -int(rng.integers(1, 4))
        p_up = Fraction(-down, up - down)
        for m, p in ((up, p_up), (down, 1 - p_up)):
            atoms[m] = atoms.get(m, Fraction(0)) + w * p
    ms = sorted(atoms)
    b = rng.uniform(-2, 2, size=len(ms))
    triples = [(q**m, float(atoms[m]), float(bi)) for m, bi in zip(ms, b)]
    total = math.fsum(t[1] for t in triples)
    triples[-1] = (triples[-1][0], triples[-1][1] + 1.0 - total, triples[-1][2])
    return discrete_law(triples, q_lattice=(q, tuple(ms)))
