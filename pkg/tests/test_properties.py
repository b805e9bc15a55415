import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from poisson_disorder import boundary as bd
from poisson_disorder import filter as flt
from poisson_disorder import flow, model
from poisson_disorder import simulator as sim
from poisson_disorder.errors import DisorderError
from poisson_disorder.filter import AtomPrior
from poisson_disorder.model import Regime

SQ2 = math.sqrt(2.0)

lams = st.floats(0.05, 3.0)
mus = st.floats(1.05, 4.0)
costs = st.floats(0.1, 5.0)
offsets = st.floats(-0.95, 0.95)
coords = st.floats(0.0, 5.0)


@st.composite
def params(draw):
    return model.validate(draw(lams), draw(mus), draw(costs), draw(offsets))


@given(params(), coords, coords, st.floats(0, 1.0), st.floats(0, 1.0))
def test_flow_semigroup(p, x, y, s, t):
    once = flow.flow(s + t, (x, y), p)
    twice = flow.flow(s, flow.flow(t, (x, y), p), p)
    assert once == pytest.approx(twice, rel=1e-9, abs=1e-12)


@given(params(), coords, coords, st.floats(0, 2.0))
def test_flow_inverse(p, x, y, t):
    assert flow.flow(-t, flow.flow(t, (x, y), p), p) == pytest.approx((x, y), rel=1e-8, abs=1e-9)


@given(params(), coords, coords)
def test_jump_round_trip(p, x, y):
    assert flow.jump_map_inverse(flow.jump_map((x, y), p), p) == pytest.approx((x, y), rel=1e-12, abs=1e-15)


@given(params(), st.integers(-3, 3), coords, coords)
def test_s_power_composes(p, n, x, y):
    assert flow.s_power(flow.s_power((x, y), n, p), -n, p) == pytest.approx((x, y), rel=1e-10, abs=1e-14)


@given(params(), st.floats(0.1, 20.0))
def test_corner_lies_on_slope_line(p, k):
    try:
        pt = model.antidiagonal_corner(p, k)
    except DisorderError:
        return
    assert pt.phi0 + pt.phi1 == pytest.approx(k, rel=1e-9)
    if p.lam != 1.0:
        assert flow.flow_slope(pt, p) == pytest.approx(-1.0, rel=1e-6, abs=1e-9)


@given(params(), coords, coords, coords, coords)
def test_running_cost_is_affine(p, x1, y1, x2, y2):
    g = model.running_cost_g
    mid = g(((x1 + x2) / 2, (y1 + y2) / 2), p)
    assert mid == pytest.approx((g((x1, y1), p) + g((x2, y2), p)) / 2, abs=1e-9)
    assert g((x1, y1), p) == pytest.approx(x1 + y1 - p.lam * SQ2 / p.c, abs=1e-12)


@given(lams, st.floats(0.0, 1.0), mus, costs, offsets)
def test_regime_monotone_in_rate(lam, bump, mu, c, m):
    lo = model.validate(lam, mu, c, m)
    hi = model.validate(lam + bump, mu, c, m)
    if lo.regime is Regime.LARGE_LAMBDA:
        assert hi.regime is Regime.LARGE_LAMBDA


@given(params())
def test_outer_level_dominates(p):
    assert p.xi_star >= (p.lam + p.mu) * SQ2 / p.c * (1 - 1e-12)
    assert p.xi_star > p.g_zero


@given(st.lists(st.floats(0.1, 6.0), min_size=1, max_size=5, unique=True), mus)
def test_closure_roots(atoms, mu):
    assume(min(abs(a - b) for a in atoms for b in atoms if a != b) > 1e-3 if len(atoms) > 1 else True)
    prior = AtomPrior(tuple(atoms), tuple([1 / len(atoms)] * len(atoms)))
    coeffs = flt.closure_coeffs(prior, mu)
    k = len(atoms)
    for a in atoms:
        v = a - mu
        total = sum(coeffs[i] * v**i for i in range(k)) + v**k
        assert abs(total) <= 1e-9 * max(1.0, abs(v) ** k)


@st.composite
def three_atom_scenarios(draw):
    mu = draw(st.floats(1.2, 3.0))
    atoms = sorted(draw(st.lists(st.floats(0.2, 5.0), min_size=3, max_size=3, unique=True)))
    assume(min(np.diff(atoms)) > 0.05)
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
    w = [r / sum(raw) for r in raw]
    w[-1] = 1.0 - sum(w[:-1])
    assume(w[-1] >= 0)
    p = model.validate(draw(st.floats(0.1, 2.0)), mu, 1.0, 0.0, draw(st.floats(0.0, 0.9)))
    events = sorted(draw(st.lists(st.floats(0.0, 3.0), max_size=12)))
    t_end = draw(st.floats(0.0, 1.0)) + (events[-1] if events else 0.0)
    return p, AtomPrior(tuple(atoms), tuple(w)), events, t_end


@settings(max_examples=30, deadline=None)
@given(three_atom_scenarios())
def test_recursive_matches_direct(case):
    p, prior, events, t_end = case
    state = flt.init_state(p, prior)
    for e in events:
        state = flt.propagate(state, e - state.t, p, prior)
        state = flt.on_jump(state, prior, p.mu)
    state = flt.propagate(state, t_end - state.t, p, prior)
    direct = flt.direct_filter(t_end, events, p, prior, prior.k)
    scale = np.maximum(np.abs(direct[:-1]), 1e-12)
    assert np.max(np.abs(state.phis - direct[:-1]) / scale) <= 1e-6
    coeffs = flt.closure_coeffs(prior, p.mu)
    assert direct[-1] == pytest.approx(-float(np.dot(coeffs, direct[:-1])), rel=1e-8, abs=1e-12)
    assert 0 <= flt.posterior(state) < 1


@settings(max_examples=40, deadline=None)
@given(params(), st.floats(0.0, 0.9), st.integers(0, 2**32))
def test_bernoulli_tilde_nonnegative(p0, pi, seed):
    p = model.validate(p0.lam, p0.mu, p0.c, p0.m, pi)
    prior = flt.bernoulli_prior(p)
    path = sim.draw_path(p, None, 3.0, seed, 0)
    trace = flt.run_filter(path.event_times, p, prior, t_end=3.0, report_step=0.25)
    for row in trace.rows:
        pt = flt.to_tilde(row[0], row[1])
        assert pt.phi0 >= -1e-9 and pt.phi1 >= -1e-9
        assert row[2] == pytest.approx(row[0], rel=1e-8, abs=1e-12)


@given(params(), st.floats(0.05, 3.0), st.integers(-2, 2), st.integers(-2, 2))
def test_s_transform_algebra(p, level, n, k):
    curve = bd.BoundaryCurve(np.linspace(0, level, 11), level - np.linspace(0, level, 11), level)
    two = bd.s_transform_curve(bd.s_transform_curve(curve, n, p), k, p)
    one = bd.s_transform_curve(curve, n + k, p)
    assert two.xi == pytest.approx(one.xi, rel=1e-12)
    assert two.ys == pytest.approx(one.ys, rel=1e-12, abs=1e-15)
    assert one.xi == pytest.approx(level * (p.mu / (p.mu - 1)) ** (n + k), rel=1e-12)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.lists(st.floats(0, 10), min_size=1, max_size=20),
       costs)
def test_loss_nonnegative(taus, thetas, c):
    n = min(len(taus), len(thetas))
    loss = sim.bayes_loss(taus[:n], thetas[:n], [False] * n, c, 10.0)
    assert np.all(loss >= 0)
    assert np.all((loss == 1.0) | (np.asarray(taus[:n]) >= np.asarray(thetas[:n])))


@given(params(), st.floats(0.0, 0.99))
def test_initial_point_matches_posterior(p, pi):
    q = model.validate(p.lam, p.mu, p.c, p.m, pi)
    pt = model.initial_tilde(q)
    assert pt.phi0 >= 0 and pt.phi1 >= 0
    st0 = flt.init_state(q, flt.bernoulli_prior(q))
    assert flt.posterior(st0) == pytest.approx(pi, abs=1e-12)
