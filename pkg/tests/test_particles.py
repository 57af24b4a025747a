import math

import numpy as np
import pytest

from dysonbeta.noise import NoiseStream
from dysonbeta.params import SimParams
from dysonbeta.particles import (RestartCapError, SingularConfigurationError, coupled_error, delta_bound_constant,
                                 detect_collision, dyson_drift, integrate_particles, keyed_increments,
                                 s_statistic, simulate_batch, simulate_delta_process, simulate_limit_path,
                                 simulate_mu_path, step_particles)


def test_dyson_drift():
    assert dyson_drift([1.5], 0.5, 2.0)[0] == pytest.approx(-3.0)
    np.testing.assert_allclose(dyson_drift([-1.0, 1.0], 0.5, 0.0), [-0.25, 0.25])
    lam = np.array([-1.3, 0.2, 0.7, 2.0])
    assert dyson_drift(lam, 0.8, 1.5).sum() == pytest.approx(-1.5 * lam.sum(), abs=1e-12)
    with pytest.raises(SingularConfigurationError):
        dyson_drift([0.0, 0.0], 1.0, 1.0)


def test_detect_collision():
    assert detect_collision([0.0, 1.0, 2.0], 0.5) is None
    i, g = detect_collision([0.0, 1e-9, 2.0], 1e-6)
    assert i == 2 and g == pytest.approx(1e-9)
    assert detect_collision([0.0, 1e-9, 1.0, 1.0 + 1e-9], 1e-6)[0] == 2


def test_s_statistic():
    assert s_statistic([2.0, 2.0, 2.0]) == 0
    assert s_statistic([0.0, 1.0], I=(0, 1)) == pytest.approx(2.0)
    assert s_statistic([0.0, 1.0, 3.0]) == pytest.approx(28.0)
    with pytest.raises(ValueError):
        s_statistic([0.0, 1.0], I=(0,))


def test_zero_noise_step_is_sorted_euler():
    lam = np.array([-1.0, 0.0, 1.0])
    new, ev = step_particles(lam, 1, 0.5, 1.0, 1e-3, NoiseStream(0), dw=np.zeros(3))
    np.testing.assert_allclose(new, np.sort(lam + dyson_drift(lam, 0.5, 1.0) * 1e-3), atol=1e-12)
    assert ev == []


def test_uncoupled_step_is_ou_then_sort():
    lam = np.array([0.0, 0.1])
    dw = np.array([0.5, -0.5])
    new, _ = step_particles(lam, 0, 1.0, 1.0, 1e-2, NoiseStream(0), dw=dw)
    np.testing.assert_allclose(new, np.sort(lam - lam * 1e-2 + math.sqrt(2) * dw))


def test_keyed_increments_drive_the_integrator():
    lam0 = np.array([0.0])
    dw = keyed_increments(3, 0, 1e-2, 5, 1)
    b = integrate_particles(lam0, 0.0, 0.0, 1e-2, 5, 3, [0], mode="continue")
    np.testing.assert_allclose(b.values[0, -1, 0], math.sqrt(2) * dw.sum(), atol=1e-12)


def test_sorted_output():
    params = SimParams(d=4, p=0.3, T=0.5, dt=1e-3, n=100)
    b = simulate_batch(params, "limit", np.arange(8), mode="continue", tol=1e-3)
    assert np.all(np.diff(b.values, axis=2) >= 0)


def test_restart_rule_shifts_gaps_by_delta():
    params = SimParams(d=2, p=0.2, T=5.0, dt=1e-3, n=100, delta=0.05, lambda0=(-0.5, 0.5))
    b = simulate_batch(params, "delta", np.arange(20), record_every=1)
    assert np.mean(b.restarts > 0) > 0.5
    ev = [e for evs in b.events for e in evs]
    assert all(e.kind == "delta_restart" and e.restart_shift == 0.05 for e in ev)


def test_restart_cap():
    params = SimParams(d=2, p=0.1, T=5.0, dt=1e-3, n=100, delta=1e-6, restart_cap=3, lambda0=(-0.01, 0.01))
    with pytest.raises(RestartCapError):
        simulate_batch(params, "delta", np.arange(5))


def test_no_restarts_when_pbeta_at_least_one():
    params = SimParams(d=3, sector="hermitian", p=1.0, T=0.5, dt=1e-3, n=100)
    assert simulate_delta_process(params, NoiseStream(0)).restarts == 0


def test_pbeta_two_no_collisions_d2():
    params = SimParams(d=2, sector="hermitian", p=1.0, T=1.0, dt=1e-3, n=100)
    b = simulate_batch(params, "limit", np.arange(1000), record_every=1000)
    assert np.all(~np.isfinite(b.first_collision))


def test_uncoupled_mu_path_marginal():
    params = SimParams(d=2, p=0.0, T=1.0, dt=1e-2, n=100, lambda0=(-1.0, 1.0))
    b = simulate_batch(params, "mu", np.arange(2000), record_every=100, mode="continue", tol=1e-3)
    terminal = b.values[:, -1]
    # sorted pair of independent OU variables: the sum is unaffected by sorting
    s = terminal.sum(axis=1)
    assert abs(s.mean()) < 3 * math.sqrt(2 * (1 - math.exp(-2)) / 2000)
    assert abs(s.var() - 2 * (1 - math.exp(-2))) < 0.1


def test_well_separated_start_no_early_collision():
    params = SimParams(d=3, p=0.5, T=0.05, dt=1e-4, n=100)
    paths = [simulate_mu_path(params, NoiseStream(0, i)) for i in range(100)]
    assert sum(p.first_collision is not None for p in paths) <= 5


def test_single_path_helpers_match_batch():
    params = SimParams(d=3, p=0.5, T=0.2, dt=1e-3, n=100, seed=4)
    one = simulate_limit_path(params, NoiseStream(4, 2))
    batch = simulate_batch(params, "limit", [0, 1, 2])
    np.testing.assert_array_equal(one.values, batch.values[2])


def test_delta_bound_constant():
    assert delta_bound_constant(3) == pytest.approx(math.sqrt(14))


def test_coupled_error_p1_is_discretisation_only():
    params = SimParams(d=3, p=1.0, T=0.2, dt=1e-3, n=100, delta=0.01)
    ref = simulate_delta_process(params, NoiseStream(0, 0))
    table = coupled_error(params, [100, 200], ref, NoiseStream(0, 0))
    assert np.all(table.errors < 1e-10)
