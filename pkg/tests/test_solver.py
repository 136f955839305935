import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from archetypal.errors import QuadratureUnderflow
from archetypal.laws import Atom, CoefficientLaw, ExponentialFrom, PointPlusHypoexp, Uniform
from archetypal.solver import (
    GridFunction,
    OperatorPlan,
    QuadratureSettings,
    apply_operator,
    dispersion,
    interior_mask,
    modulus_of_continuity,
    picard_iterate,
    residual_sup,
)

from conftest import cos2pi


def uniform_cdf(x):
    return np.clip((np.asarray(x) + 2.0) / 4.0, 0.0, 1.0)


def laws_for_properties():
    return [
        CoefficientLaw((Atom(2.0, 0.5, Uniform(-0.5, 0.5)), Atom(-0.5, 0.5, ExponentialFrom(0.3)))),
        CoefficientLaw((Atom(0.5, 1.0, PointPlusHypoexp(0.0, (1.0, -1.0))),)),
    ]


def test_constant_fixed(bernoulli, mirror_exponential):
    for law in (bernoulli, mirror_exponential, *laws_for_properties()):
        y = GridFunction.from_function(lambda x: 5.0, -3, 3, 0.01)
        assert np.all(apply_operator(y, law).values == 5.0)


def test_identity_doubles_under_bernoulli(bernoulli):
    y = GridFunction.from_function(lambda x: x, -4, 4, 0.01)
    Ty = apply_operator(y, bernoulli)
    x = y.x
    ok = (np.abs(2 * (x + 1)) <= 4) & (np.abs(2 * (x - 1)) <= 4)
    np.testing.assert_allclose(Ty.values[ok], 2 * x[ok], atol=1e-12)
    mask = interior_mask(y, bernoulli)
    assert residual_sup(y, bernoulli) == pytest.approx(np.max(np.abs(x[mask])))


def test_periodic_solution_is_fixed(mirror_periodic):
    y = GridFunction.from_function(cos2pi, -3, 3, 1 / 1024)
    assert residual_sup(y, mirror_periodic) <= 1e-10
    # off-node grids see only interpolation error, O(dx^2)
    dx = 0.003
    y = GridFunction.from_function(cos2pi, -3, 3, dx)
    assert residual_sup(y, mirror_periodic) <= (2 * math.pi) ** 2 * 2 * dx**2 / 8 * 2


def test_uniform_cdf_is_fixed_under_bernoulli(bernoulli):
    dx = 1 / 256
    y = GridFunction.from_function(uniform_cdf, -4, 4, dx)
    assert residual_sup(y, bernoulli) <= 1e-12
    out, trace = picard_iterate(y, bernoulli, max_iter=20)
    assert trace.step_norms[0] <= 1e-12
    assert dispersion(out, (-2.0, 2.0)) == pytest.approx(1.0)


def test_picard_constant_converges_immediately(canonical_lattice):
    y = GridFunction.from_function(lambda x: 3.0, -5, 5, 0.05)
    out, trace = picard_iterate(y, canonical_lattice)
    assert trace.iterations == 1 and trace.step_norms[0] == 0.0
    assert dispersion(out) == 0.0


def test_dispersion_examples():
    assert dispersion(GridFunction.from_function(lambda x: 4.0, 0, 1, 0.1)) == 0.0
    dx = 0.001
    y = GridFunction.from_function(np.sin, -math.pi, math.pi, dx)
    assert abs(dispersion(y, (-math.pi, math.pi)) - 2.0) <= dx**2
    y = GridFunction.from_function(lambda x: x, 0, 1, 0.01)
    assert dispersion(y, (0.0, 1.0)) == pytest.approx(1.0)


def test_modulus_of_continuity_examples():
    assert modulus_of_continuity(GridFunction.from_function(lambda x: 1.0, 0, 1, 0.1), 0.1) == 0.0
    y = GridFunction.from_function(np.sin, -3, 3, 0.001)
    assert modulus_of_continuity(y, 0.01) <= 0.01
    step = GridFunction.from_function(lambda x: (x >= 0).astype(float), -1, 1, 0.001)
    for h in (0.001, 0.01, 0.5):
        assert modulus_of_continuity(step, h) == pytest.approx(1.0)


def grid_values(n):
    return arrays(np.float64, n, elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=30, deadline=None)
@given(grid_values(201), grid_values(201), st.sampled_from([0, 1]))
def test_operator_is_non_expansive(u, v, which):
    law = laws_for_properties()[which]
    y = GridFunction(-2.0, 0.02, u)
    z = GridFunction(-2.0, 0.02, v)
    plan = OperatorPlan(y, law)
    mask = plan.outside_mass() <= 1e-6
    lhs = np.abs(plan.apply_values(u) - plan.apply_values(v))
    rhs = np.max(np.abs(u - v))
    assert np.all(lhs <= rhs + 1e-12)
    assert lhs[mask].max(initial=0.0) <= rhs + 1e-12


@settings(max_examples=30, deadline=None)
@given(grid_values(201), st.sampled_from([0, 1]))
def test_operator_respects_bounds(u, which):
    law = laws_for_properties()[which]
    Ty = OperatorPlan(GridFunction(-2.0, 0.02, u), law).apply_values(u)
    assert np.all(Ty >= u.min() - 1e-12) and np.all(Ty <= u.max() + 1e-12)


def test_dispersion_non_increasing_along_picard(canonical_lattice):
    # the averaging bound controls the oscillation over the whole grid
    y = GridFunction.from_function(np.sin, -20, 20, 0.01)
    _, trace = picard_iterate(y, canonical_lattice, max_iter=60, window=(-20.0, 20.0))
    d = np.array(trace.dispersions)
    assert np.all(np.diff(d) <= 1e-12)


def test_exponential_quadrature_matches_closed_form():
    # E cos(-(x - xi)) with xi ~ Exp(1) on (0, inf) equals (cos x + sin x) / 2
    law = CoefficientLaw((Atom(-1.0, 1.0, ExponentialFrom(0.0)),))
    dx = 0.005
    y = GridFunction.from_function(np.cos, -40, 40, dx)
    Ty = apply_operator(y, law)
    mask = interior_mask(y, law)
    x = y.x
    exact = 0.5 * (np.cos(x) + np.sin(x))
    assert np.max(np.abs(Ty.values - exact)[mask]) <= dx**2


def test_uniform_quadrature_matches_closed_form():
    law = CoefficientLaw((Atom(1.0, 1.0, Uniform(-0.5, 0.5)),))
    y = GridFunction.from_function(np.sin, -5, 5, 0.01)
    Ty = apply_operator(y, law)
    mask = interior_mask(y, law)
    exact = np.sin(y.x) * 2 * math.sin(0.5)
    assert np.max(np.abs(Ty.values - exact)[mask]) <= 1e-4


@dataclass(frozen=True)
class ShortExponential(ExponentialFrom):
    """Unit exponential whose reported support drops the mass beyond 5."""

    def support(self, tail_tol=1e-10):
        return (self.c, self.c + 5.0)


def test_quadrature_underflow_without_renormalisation():
    law = CoefficientLaw((Atom(1.0, 1.0, ShortExponential(0.0)),))
    y = GridFunction.from_function(np.sin, -5, 5, 0.05)
    with pytest.raises(QuadratureUnderflow):
        OperatorPlan(y, law, QuadratureSettings(renormalize=False))
    # with renormalisation the truncated weights still fix constants
    c = GridFunction.from_function(lambda x: 2.0, -5, 5, 0.05)
    assert np.all(apply_operator(c, law).values == 2.0)


def test_residual_is_nan_without_interior(bernoulli):
    y = GridFunction.from_function(lambda x: 1.0, -0.5, 0.5, 0.1)
    assert math.isnan(residual_sup(y, bernoulli))


def test_grid_csv_round_trip(tmp_path):
    y = GridFunction.from_function(np.sin, -1, 1, 0.125)
    path = tmp_path / "y.csv"
    y.write_csv(path)
    back = GridFunction.read_csv(path)
    assert back.x_min == y.x_min and back.dx == pytest.approx(y.dx)
    np.testing.assert_array_equal(back.values, y.values)
