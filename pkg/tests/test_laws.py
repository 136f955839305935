import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archetypal.errors import DegenerateZero, InvalidLaw
from archetypal.laws import (
    Atom,
    CoefficientLaw,
    ExponentialFrom,
    PointMass,
    PointPlusHypoexp,
    Regime,
    Uniform,
    classify_regime,
    detect_degeneracies,
    discrete_law,
    lattice_drift,
    log_beta_moment,
    log_scale_moment,
    sample_pair,
)


def test_bernoulli_samples_have_expected_support(bernoulli):
    a, b, _ = bernoulli.sample(np.random.default_rng(3), 1000)
    assert np.all(a == 2.0)
    assert set(np.unique(b)) == {-1.0, 1.0}


def test_exponential_shift_is_positive():
    law = CoefficientLaw((Atom(1.0, 1.0, ExponentialFrom(0.0)),))
    a, b, _ = law.sample(np.random.default_rng(0), 10_000)
    assert np.all(a == 1.0)
    assert np.all(b > 0)


def test_exponential_shift_mean(mirror_exponential):
    _, b, _ = mirror_exponential.sample(np.random.default_rng(1), 100_000)
    se = b.std(ddof=1) / math.sqrt(b.size)
    assert abs(b.mean() - 1.0) <= 3 * se


def test_sample_pair_is_reproducible(bernoulli):
    assert sample_pair(bernoulli, 123) == sample_pair(bernoulli, 123)
    a1, b1, _ = bernoulli.sample(np.random.default_rng(9), 50)
    a2, b2, _ = bernoulli.sample(np.random.default_rng(9), 50)
    assert np.array_equal(b1, b2) and np.array_equal(a1, a2)


def test_probabilities_must_sum_to_one():
    with pytest.raises(InvalidLaw):
        discrete_law([(2.0, 0.5, 0.0), (0.5, 0.4, 0.0)])
    with pytest.raises(InvalidLaw):
        discrete_law([(2.0, 1.5, 0.0), (0.5, -0.5, 0.0)])


def test_q_lattice_declaration_is_checked():
    with pytest.raises(InvalidLaw):
        discrete_law([(2.0, 0.5, 0.0), (0.5, 0.5, 0.0)], q_lattice=(2.0, (1, 1)))
    with pytest.raises(InvalidLaw):
        discrete_law([(2.0, 1.0, 0.0)], q_lattice=(1.0, (0,)))


@pytest.mark.parametrize(
    "triples, expected",
    [
        ([(2.0, 0.5, 0.0), (0.5, 0.5, 0.0)], 0.0),
        ([(2.0, 1.0, 0.0)], math.log(2.0)),
        ([(2.0, 0.25, 0.0), (0.5, 0.75, 0.0)], -0.5 * math.log(2.0)),
    ],
)
def test_log_scale_moment_examples(triples, expected):
    assert log_scale_moment(discrete_law(triples)) == pytest.approx(expected, abs=1e-15)


def test_log_scale_moment_zero_atom_raises():
    with pytest.raises(DegenerateZero):
        log_scale_moment(discrete_law([(0.0, 0.5, 0.0), (2.0, 0.5, 0.0)]))


@given(
    st.lists(st.integers(min_value=1, max_value=9), min_size=1, max_size=4),
    st.lists(st.integers(min_value=1, max_value=4), min_size=4, max_size=4),
)
def test_log_scale_moment_matches_weighted_sum(weights, scales):
    total = sum(weights)
    triples = [(float(scales[i]) / 2.0, w / total, 0.0) for i, w in enumerate(weights)]
    triples = [t for t in triples if t[0] != 0.0]
    law = discrete_law(triples)
    expected = sum(p * math.log(abs(a)) for a, p, _ in triples)
    assert log_scale_moment(law) == pytest.approx(expected, abs=1e-14)


def test_lattice_drift_is_exact():
    law = discrete_law([(9.0, 1 / 3, 0.0), (1 / 3, 2 / 3, 0.0)], q_lattice=(3.0, (2, -1)))
    assert lattice_drift(law) == Fraction(0)
    assert log_scale_moment(law) == 0.0


def test_resonance_detected(resonant_lattice):
    assert detect_degeneracies(resonant_lattice).resonance == pytest.approx(1.0)


def test_no_resonance_for_distinct_fixed_points(canonical_lattice):
    assert detect_degeneracies(canonical_lattice).resonance is None


def test_p_zero_readout():
    law = discrete_law([(0.0, 1 / 3, 0.0), (2.0, 2 / 3, 0.0)])
    assert detect_degeneracies(law).p_zero == pytest.approx(1 / 3)


@settings(max_examples=60)
@given(
    st.lists(
        st.tuples(
            st.sampled_from([-2.0, -0.5, 0.5, 2.0, 3.0, 1.0, -1.0]),
            st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0]),
        ),
        min_size=1,
        max_size=4,
    ),
    st.sampled_from([None, 0.0, 1.0, -1.0, 0.25]),
)
def test_resonance_sound_and_complete(pairs, target):
    # Optionally force a common fixed point c by solving b = c (1 - 1/a).
    if target is not None:
        pairs = [(a, target * (1.0 - 1.0 / a)) for a, _ in pairs]
    law = discrete_law([(a, 1.0 / len(pairs), b) for a, b in pairs])
    c = detect_degeneracies(law).resonance
    candidates = [0.0, 1.0, -1.0, 0.25] + ([c] if c is not None else [])
    holds = [all(abs(a * (x - b) - x) <= 1e-9 for a, b in pairs) for x in candidates]
    if c is not None:
        assert all(abs(a * (c - b) - c) <= 1e-9 for a, b in pairs)
    else:
        assert not any(holds)


def test_regime_examples(bernoulli, canonical_lattice, mirror_exponential):
    rep = classify_regime(bernoulli)
    assert rep.regime is Regime.SUPERCRITICAL
    assert rep.K == pytest.approx(math.log(2.0))
    rep = classify_regime(canonical_lattice)
    assert rep.regime is Regime.CRITICAL and rep.K == 0.0
    assert classify_regime(mirror_exponential).regime is Regime.DEGENERATE_UNIT_MODULUS


def test_regime_precedence():
    zero = discrete_law([(0.0, 0.5, 0.0), (1.0, 0.5, 0.0)])
    assert classify_regime(zero).regime is Regime.DEGENERATE_ZERO
    assert classify_regime(zero).K is None
    resonant = discrete_law([(2.0, 0.5, 0.5), (0.5, 0.5, -1.0)])
    assert classify_regime(resonant).regime is Regime.RESONANT
    sub = discrete_law([(0.5, 0.5, 1.0), (0.5, 0.5, -1.0)])
    assert classify_regime(sub).regime is Regime.SUBCRITICAL


@settings(max_examples=50)
@given(
    st.lists(
        st.tuples(st.sampled_from([0.0, -1.0, 1.0, 0.5, 2.0, 3.0]), st.floats(-2, 2)),
        min_size=1,
        max_size=4,
    )
)
def test_regime_is_always_exactly_one(pairs):
    law = discrete_law([(a, 1.0 / len(pairs), b) for a, b in pairs])
    rep = classify_regime(law)
    assert isinstance(rep.regime, Regime)
    assert sum(rep.regime is r for r in Regime) == 1


def test_log_beta_moment_closed_forms():
    from scipy import integrate

    u = Uniform(-3.0, 2.0)
    quad = integrate.quad(lambda t: math.log(max(abs(t), 1.0)) / 5.0, -3, 2, points=[-1, 1])[0]
    assert u.log_moment() == pytest.approx(quad, abs=1e-12)
    e = ExponentialFrom(-2.0)
    quad = integrate.quad(
        lambda t: math.log(max(abs(t), 1.0)) * math.exp(-2.0 - t), -2, 60, points=[-1, 1], limit=200
    )[0]
    assert e.log_moment() == pytest.approx(quad, abs=1e-10)
    assert PointMass(math.e).log_moment() == pytest.approx(1.0)


def test_log_beta_moment_flag_finite():
    law = CoefficientLaw(
        (Atom(2.0, 0.5, PointPlusHypoexp(0.0, (1.0, -1.0))), Atom(0.5, 0.5, Uniform(-1, 1)))
    )
    value, finite = log_beta_moment(law)
    assert finite and value > 0


def test_law_round_trips_through_dict(canonical_lattice):
    law = CoefficientLaw(
        (
            Atom(2.0, 0.25, PointPlusHypoexp(0.5, (1.0, 2.0))),
            Atom(-1.0, 0.25, ExponentialFrom(1.0)),
            Atom(0.5, 0.5, Uniform(-0.5, 0.5)),
        )
    )
    assert CoefficientLaw.from_dict(law.to_dict()) == law
    assert CoefficientLaw.from_dict(canonical_lattice.to_dict()) == canonical_lattice
