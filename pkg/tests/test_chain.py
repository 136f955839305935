import math

import numpy as np
import pytest

from archetypal.chain import (
    FixedHorizon,
    HitOne,
    HitPositive,
    HitZero,
    LatticeReturn,
    SmallModulus,
    chain_step,
    default_modulus_level,
    initial_state,
    run_until,
    sample_stopped_shift,
    simulate_paths,
    stopped_mean,
    tau_distribution,
)
from archetypal.errors import AllPathsCapped, RuleUnconstructible
from archetypal.laws import discrete_law
from archetypal.solver import GridFunction, residual_sup

from conftest import cos2pi


def test_first_step():
    s = chain_step(initial_state(0.7), (3.0, 0.2))
    assert s.X == pytest.approx(3.0 * (0.7 - 0.2))
    assert (s.n, s.A, s.D) == (1, 3.0, pytest.approx(0.6))


def test_two_step_shift_expansion():
    a1, b1, a2, b2 = 2.0, 0.3, -0.5, 1.7
    s = chain_step(chain_step(initial_state(1.1), (a1, b1)), (a2, b2))
    assert s.D == pytest.approx(b1 * a1 * a2 + b2 * a2)
    assert s.identity_error(1.1) < 1e-15


def test_zero_scaling_annihilates():
    s = chain_step(chain_step(initial_state(5.0), (2.0, 1.0)), (0.0, 4.0))
    assert s.A == 0.0 and s.X == 0.0


def test_identity_holds_on_every_path(bernoulli):
    batch = simulate_paths(bernoulli, 0.3, FixedHorizon(12), 2000, rng=1)
    err = np.abs(batch.X - (batch.A * 0.3 - batch.D))
    assert np.all(err <= 1e-9 * (1 + np.abs(batch.A) + np.abs(batch.D)))


def test_debug_identity_assertion(monkeypatch, canonical_lattice):
    import archetypal.chain as chain

    monkeypatch.setattr(chain, "DEBUG", True)
    out = run_until(canonical_lattice, 0.4, FixedHorizon(200), rng=2)
    assert out.stopped and out.state.identity_error(0.4) < 1e-9
    simulate_paths(canonical_lattice, 0.4, FixedHorizon(50), 100, rng=2)


def test_hit_zero_geometric():
    law = discrete_law([(0.0, 1 / 3, 0.0), (2.0, 2 / 3, 0.0)])
    n_paths = 100_000
    batch = simulate_paths(law, 1.0, HitZero(), n_paths, rng=5)
    for n in range(1, 11):
        emp = float(np.mean(batch.tau > n))
        exact = (2 / 3) ** n
        assert abs(emp - exact) <= 3 * math.sqrt(exact * (1 - exact) / n_paths)


def test_hit_zero_half_is_geometric_half():
    law = discrete_law([(0.0, 0.5, 0.0), (1.0, 0.5, 0.0)])
    pmf = tau_distribution(law, HitZero(), 50_000, cap=200, rng=6)
    for n in range(1, 8):
        exact = 0.5**n
        assert abs(pmf[n] - exact) <= 3 * math.sqrt(exact * (1 - exact) / 50_000)


def test_alpha_minus_one_hits_one_at_two(mirror_periodic):
    pmf = tau_distribution(mirror_periodic, HitOne(), 1000, rng=7)
    assert pmf[2] == 1.0


def test_small_modulus_caps_on_supercritical_law(bernoulli):
    batch = simulate_paths(bernoulli, 1.0, SmallModulus(3.0), 500, cap=1000, rng=8)
    assert batch.cap_rate > 0.9


def test_default_modulus_level():
    M = default_modulus_level(3.0, 0.01)
    assert 3.0 * math.exp(-M) < 0.01


def test_stopped_mean_of_constant_is_exact(bernoulli):
    est = stopped_mean(lambda x: np.full_like(x, 2.5), bernoulli, 0.4, FixedHorizon(5), 1000, rng=1)
    assert est.estimate == 2.5 and est.stderr == 0.0


def test_periodic_solution_is_stopped_harmonic(mirror_periodic):
    for x in (0.0, 0.3, 1.7):
        est = stopped_mean(cos2pi, mirror_periodic, x, HitOne(), 20_000, rng=11)
        assert abs(est.estimate - float(cos2pi(x))) <= 3 * est.stderr + 1e-12


def test_periodic_solution_with_positive_sign_rule(mirror_periodic):
    est = stopped_mean(cos2pi, mirror_periodic, 0.3, HitPositive(), 20_000, rng=12)
    assert abs(est.estimate - float(cos2pi(0.3))) <= 3 * est.stderr + 1e-12


def test_stopped_shift_enumeration(mirror_periodic):
    n = 60_000
    d = sample_stopped_shift(mirror_periodic, HitOne(), n, rng=13).values
    assert set(np.round(np.unique(d), 12)) <= {-2.0, 0.0, 2.0}
    for value, prob in ((0.0, 5 / 9), (2.0, 2 / 9), (-2.0, 2 / 9)):
        freq = float(np.mean(np.isclose(d, value)))
        assert abs(freq - prob) <= 3 * math.sqrt(prob * (1 - prob) / n)


def test_single_unit_atom_stops_after_one_step():
    law = discrete_law([(1.0, 1.0, 0.75)])
    out = run_until(law, 0.0, HitOne(), rng=0)
    assert out.state.n == 1 and out.state.D == 0.75


def test_lattice_return_samples_are_finite(canonical_lattice):
    s = sample_stopped_shift(canonical_lattice, LatticeReturn(), 5000, cap=10_000, rng=14)
    assert np.all(np.isfinite(s.values))
    assert s.cap_rate < 0.02


def test_lattice_bookkeeping_is_exact():
    law = discrete_law([(3.0, 0.4, 0.1), (1 / 3, 0.6, -0.2)], q_lattice=(3.0, (1, -1)))
    out = run_until(law, 0.5, FixedHorizon(1000), cap=1000, rng=15)
    st = out.state
    exact = st.sign * 3.0**st.lattice_exp
    assert abs(st.A - exact) <= 1e-9 * abs(exact)


def test_hit_one_needs_exact_bookkeeping(bernoulli):
    with pytest.raises(RuleUnconstructible):
        simulate_paths(bernoulli, 0.0, HitOne(), 10)
    with pytest.raises(RuleUnconstructible):
        run_until(bernoulli, 0.0, LatticeReturn())


def test_all_paths_capped_raises(bernoulli):
    with pytest.raises(AllPathsCapped):
        stopped_mean(np.cos, bernoulli, 1.0, SmallModulus(2.0), 50, cap=20, rng=1)


def test_one_step_martingale_property(mirror_periodic):
    y = GridFunction.from_function(cos2pi, -4.0, 4.0, 1 / 1024)
    eps = residual_sup(y, mirror_periodic)
    for x in (-0.6, 0.1, 0.45):
        est = stopped_mean(y, mirror_periodic, x, FixedHorizon(1), 20_000, rng=16)
        assert abs(est.estimate - float(y(x))) <= eps + 3 * est.stderr + 1e-12


def test_results_do_not_depend_on_thread_count(canonical_lattice):
    one = simulate_paths(canonical_lattice, 0.0, LatticeReturn(), 70_000, cap=500, rng=99, threads=1)
    four = simulate_paths(canonical_lattice, 0.0, LatticeReturn(), 70_000, cap=500, rng=99, threads=4)
    assert np.array_equal(one.D, four.D) and np.array_equal(one.tau, four.tau)


def test_path_csv(tmp_path, bernoulli):
    batch = simulate_paths(bernoulli, 0.0, FixedHorizon(2), 5, rng=1)
    path = tmp_path / "paths.csv"
    batch.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "path_id,tau,A_tau,D_tau,X_tau,status"
    assert len(lines) == 6 and lines[1].endswith("Stopped")
