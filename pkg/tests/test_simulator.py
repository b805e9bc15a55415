import math

import numpy as np
import pytest

from poisson_disorder import boundary as bd
from poisson_disorder import errors, model
from poisson_disorder import simulator as sim
from poisson_disorder.errors import DisorderError
from poisson_disorder.filter import AtomPrior
from poisson_disorder.simulator import PolicySpec

SQ2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def refl_curve(refl, refl_small):
    return bd.clamp_curve(bd.extract_gamma(refl_small, refl, evaluator="operator"), refl)


def test_path_rng_streams_are_distinct_and_reproducible():
    a = sim.path_rng(7, 3).random(4)
    assert np.array_equal(a, sim.path_rng(7, 3).random(4))
    assert not np.array_equal(a, sim.path_rng(7, 4).random(4))
    assert not np.array_equal(a, sim.path_rng(8, 3).random(4))
    with pytest.raises(DisorderError):
        sim.path_rng(-1, 0)


def test_scenario_frequencies():
    p = model.ref_s(0.3)
    n = 100_000
    sc = [sim.sample_scenario(p, None, sim.path_rng(11, i)) for i in range(n)]
    theta = np.array([s.theta for s in sc])
    up = np.mean([s.lambda_post == p.mu + 1 for s in sc])
    assert abs(up - 0.95) <= 3 * math.sqrt(0.95 * 0.05 / n)
    zero = np.mean(theta == 0)
    assert abs(zero - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / n)
    pos = theta[theta > 0]
    assert abs(pos.mean() - 1 / p.lam) <= 3 * pos.std() / math.sqrt(pos.size)


def test_no_point_mass_without_prior_mass():
    p = model.ref_l(0.0)
    assert all(sim.sample_scenario(p, None, sim.path_rng(0, i)).theta > 0 for i in range(2000))


def test_sample_path_rejects_bad_horizon():
    with pytest.raises(DisorderError):
        sim.sample_path(sim.Scenario(1.0, 3.0), model.ref_l(), 0.0, sim.path_rng(0, 0))


def test_unchanged_rate_paths_are_poisson():
    p = model.ref_l()
    counts = np.array([sim.sample_path(sim.Scenario(math.inf, p.mu), p, 5.0, sim.path_rng(1, i)).event_times.size
                       for i in range(20_000)])
    assert abs(counts.mean() - p.mu * 5) <= 3 * math.sqrt(p.mu * 5 / counts.size)


def test_immediate_change_paths():
    p = model.ref_l()
    counts = np.array([sim.sample_path(sim.Scenario(0.0, p.mu + 1), p, 4.0, sim.path_rng(2, i)).event_times.size
                       for i in range(20_000)])
    assert abs(counts.mean() - (p.mu + 1) * 4) <= 3 * math.sqrt((p.mu + 1) * 4 / counts.size)


def test_mean_event_count_closed_form():
    p = model.ref_s(0.2)
    horizon = 3.0
    n = 100_000
    counts = np.array([sim.draw_path(p, None, horizon, 5, i).event_times.size for i in range(n)])
    e_min = (1 - p.pi) * (1 - math.exp(-p.lam * horizon)) / p.lam
    e_post = 0.05 * (p.mu - 1) + 0.95 * (p.mu + 1)
    expected = p.mu * e_min + e_post * (horizon - e_min)
    assert abs(counts.mean() - expected) <= 3 * counts.std() / math.sqrt(n)


def test_events_sorted_and_within_horizon():
    path = sim.draw_path(model.ref_l(), None, 6.0, 3, 9)
    ev = path.event_times
    assert np.all(np.diff(ev) > 0) and ev[-1] <= 6.0 and ev[0] >= 0


def test_policy_spec_validation(refl):
    with pytest.raises(DisorderError):
        PolicySpec.posterior_threshold(1.0)
    with pytest.raises(DisorderError):
        PolicySpec.fixed_time(-1.0)
    with pytest.raises(DisorderError):
        PolicySpec.boundary(sim.sum_level_curve(10.0), refl)
    assert PolicySpec.posterior_threshold(0.5).stop_curve().xi == pytest.approx(SQ2)


def test_fixed_time_policy():
    p = model.ref_l()
    path = sim.draw_path(p, None, 10.0, 0, 0)
    assert sim.run_policy(path, PolicySpec.fixed_time(2.5), p) == (2.5, False)
    assert sim.run_policy(path, PolicySpec.fixed_time(12.0), p).truncated


def test_start_in_stopping_region():
    p = model.ref_l(0.9)
    path = sim.draw_path(p, None, 5.0, 0, 0)
    assert sim.run_policy(path, PolicySpec.posterior_threshold(0.5), p).time == 0.0


def test_routes_agree(refl, refl_curve):
    horizon = 30.0
    policy = PolicySpec.boundary(refl_curve, refl)
    batch = sim.run_curve_batch(refl, refl_curve, 200, horizon, seed=4)
    for i in range(200):
        alarm = sim.run_policy(sim.draw_path(refl, None, horizon, 4, i), policy, refl)
        assert alarm.time == pytest.approx(batch.times[i], abs=1e-9)
        assert alarm.truncated == bool(batch.truncated[i])


def test_threshold_routes_agree(refl):
    horizon = 30.0
    curve = PolicySpec.posterior_threshold(0.6).stop_curve()
    batch = sim.run_curve_batch(refl, curve, 100, horizon, seed=2)
    for i in range(100):
        alarm = sim.run_policy(sim.draw_path(refl, None, horizon, 2, i), PolicySpec.posterior_threshold(0.6), refl)
        assert alarm.time == pytest.approx(batch.times[i], abs=1e-9)


def test_bayes_loss():
    loss = sim.bayes_loss([1.0, 3.0, 5.0], [2.0, 2.0, 1.0], [False, False, True], c=0.5, horizon=5.0)
    assert list(loss) == [1.0, 0.5, 2.0]


def test_immediate_alarm_risk():
    p = model.ref_l()
    est = sim.empirical_bayes_risk(p, None, PolicySpec.fixed_time(0.0), 20_000, seed=1)
    assert abs(est.mean - 0.8) <= 3 * est.stderr
    assert est.truncation_count == 0


def test_late_alarm_risk_grows():
    p = model.ref_l()
    a = sim.empirical_bayes_risk(p, None, PolicySpec.fixed_time(5.0), 2000, seed=1)
    b = sim.empirical_bayes_risk(p, None, PolicySpec.fixed_time(10.0), 2000, seed=1)
    assert b.mean > a.mean


def test_risk_needs_enough_paths():
    with pytest.raises(DisorderError):
        sim.empirical_bayes_risk(model.ref_l(), None, PolicySpec.fixed_time(0.0), 50)


def test_risk_reproducible(refl, refl_curve):
    pol = PolicySpec.boundary(refl_curve, refl)
    a = sim.empirical_bayes_risk(refl, None, pol, 500, seed=9)
    b = sim.empirical_bayes_risk(refl, None, pol, 500, seed=9)
    assert a == b
    assert 0 <= a.mean <= 1 + refl.c * a.horizon


def test_general_prior_policy():
    p = model.validate(1.0, 2.0, 1.0, 0.0, 0.2)
    prior = AtomPrior((1.0, 2.5, 3.0), (0.3, 0.3, 0.4))
    est = sim.empirical_bayes_risk(p, prior, PolicySpec.posterior_threshold(0.6), 200, seed=3)
    assert 0 < est.mean < 1 + p.c * est.horizon
    with pytest.raises(DisorderError):
        sim.run_curve_batch(p, sim.sum_level_curve(1.0), 10, 5.0, 0, prior=prior)


def test_alarms_never_inside_first_triangle(refl, refl_curve):
    res = sim.run_curve_batch(refl, refl_curve, 2000, 60.0, seed=6)
    fired = ~res.truncated
    assert np.all(res.x_end[fired] + res.y_end[fired] >= refl.g_zero - 1e-9)


def test_sandwich_small(refl, refl_curve):
    rep = sim.sandwich_check(refl, refl_curve, 1000, seed=8)
    assert rep.violations == 0


def test_dynkin_limits():
    p = model.ref_l()
    lhs, rhs, _ = sim.dynkin_check(p, 2000, 1e-6, seed=0)
    assert abs(lhs) < 1e-4 and abs(rhs) < 1e-4
    rep = sim.dynkin_check(p, 2000, 0.01, seed=0)
    assert rep.rhs == pytest.approx(p.lam * SQ2 * 0.01, rel=0.05)


def test_dynkin_rejects_nonpositive_cap():
    with pytest.raises(DisorderError) as exc:
        sim.dynkin_check(model.ref_l(), 10, 0.0)
    assert exc.value.code == errors.INVALID_ARGUMENT


def test_exit_time_examples():
    p = model.ref_l()
    assert sim.exit_time_bound(p) == pytest.approx(4.5)
    rep = sim.exit_time_bound_check(p, 200, start=(3.0, 2.0))
    assert rep.mean == 0.0
    assert sim.exit_time_bound(p, 2 * p.xi_star) > sim.exit_time_bound(p)


def test_default_horizon(refl):
    assert sim.default_horizon(refl) == pytest.approx(90.0)


def test_pooled_stderr():
    assert sim.pooled_stderr(3.0, 4.0) == 5.0
