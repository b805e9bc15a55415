import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from poisson_disorder import errors, model
from poisson_disorder.errors import DisorderError
from poisson_disorder.model import Regime

SQ2 = math.sqrt(2.0)


def test_validate_accepts_reference_configs():
    assert model.validate(1, 2, 1, 0, 0.2).mu == 2.0
    assert model.validate(0.15, 1.5, 0.7, 0.9, 0).m == 0.9


def test_validate_rejects_small_mu():
    with pytest.raises(DisorderError) as exc:
        model.validate(1, 0.5, 1, 0)
    assert exc.value.code == errors.MU_NOT_GT_ONE


def test_validate_lists_every_failed_bound():
    with pytest.raises(DisorderError) as exc:
        model.validate(-1, 0.5, 0, 1.5, 1.0)
    assert set(exc.value.codes) == {errors.LAMBDA_NOT_POSITIVE, errors.MU_NOT_GT_ONE, errors.C_NOT_POSITIVE,
                                    errors.M_OUT_OF_RANGE, errors.PI_OUT_OF_RANGE}


def test_validate_rejects_nan():
    with pytest.raises(DisorderError) as exc:
        model.validate(float("nan"), 2, 1, 0)
    assert exc.value.code == errors.NOT_FINITE


@pytest.mark.parametrize(
    "lam,c,m,expected",
    [(1.0, 1.0, 0.0, Regime.LARGE_LAMBDA), (0.15, 0.7, 0.9, Regime.SMALL_LAMBDA), (0.335, 0.7, 0.9, Regime.LARGE_LAMBDA)],
)
def test_classify_regime(lam, c, m, expected):
    assert model.classify_regime(model.validate(lam, 2.0, c, m)) is expected


def test_regime_thresholds():
    assert model.regime_threshold(0.0, 1.0) == 0.5
    assert model.regime_threshold(0.9, 0.7) == pytest.approx(0.335)


def test_mean_level():
    assert model.mean_level(model.ref_s()) == pytest.approx(0.237089, abs=1e-6)
    assert model.mean_level(model.validate(0.5, 2, 1, 0)) == pytest.approx(1 / SQ2)
    with pytest.raises(DisorderError) as exc:
        model.mean_level(model.ref_l())
    assert exc.value.code == errors.LAMBDA_EQ_ONE


def test_phi_d_undefined_for_large_rates():
    assert model.ref_l().derived.phi_d is None
    assert model.ref_s().derived.phi_d == pytest.approx(model.mean_level(model.ref_s()))


def test_running_cost():
    refs = model.ref_s()
    assert model.running_cost_g((0, 0), refs) == pytest.approx(-0.303046, abs=1e-6)
    assert model.running_cost_g((refs.g_zero, 0), refs) == 0.0
    assert model.running_cost_g((1, 1), model.ref_l()) == pytest.approx(2 - SQ2)


def _line_solve(params, k):
    lam = params.lam
    a = np.array([[lam + 1.0, lam - 1.0], [1.0, 1.0]])
    return np.linalg.solve(a, np.array([-lam * SQ2, k]))


def test_corner_at_first_level():
    refs = model.ref_s()
    pt = model.antidiagonal_corner(refs, refs.g_zero)
    lam, c = refs.lam, refs.c
    closed = (lam / SQ2 * ((1 - lam) / c - 1), lam / SQ2 * ((1 + lam) / c + 1))
    assert pt == pytest.approx(closed, rel=1e-12)
    assert pt == pytest.approx((0.022728, 0.280317), abs=1e-6)


def test_corner_at_outer_level():
    refs = model.ref_s()
    k = (refs.lam + refs.mu) * SQ2 / refs.c
    assert k == pytest.approx(3.333503, abs=1e-6)
    pt = model.antidiagonal_corner(refs, k)
    assert pt == pytest.approx((1.310673, 2.022831), abs=1e-6)
    assert pt == pytest.approx(tuple(_line_solve(refs, k)), rel=1e-12)


def test_corner_on_axis():
    p = model.validate(0.5, 2, 1, 0)
    k = p.lam * SQ2 / (1 - p.lam)
    pt = model.antidiagonal_corner(p, k)
    assert pt.phi0 == pytest.approx(0.0, abs=1e-15)
    assert pt.phi1 == pytest.approx(k)


def test_corner_rejects_negative_crossing():
    with pytest.raises(DisorderError) as exc:
        model.antidiagonal_corner(model.ref_s(), 0.1)
    assert exc.value.code == errors.NEGATIVE_COORDINATE


def test_xi_star_large_branch():
    assert model.xi_star(model.ref_l()) == pytest.approx(3 * SQ2)
    assert model.xi_star(model.validate(0.9, 2, 10, 0)) == pytest.approx(0.410122, abs=1e-6)


def test_xi_star_small_branch_against_ode():
    """Run the tilde ODE backward from the outer corner until x hits 0."""
    refs = model.ref_s()
    lam, m = refs.lam, refs.m
    x0, y0 = model.antidiagonal_corner(refs, (lam + refs.mu) * SQ2 / refs.c)

    def rhs(_t, z):
        return [-((lam + 1) * z[0] + lam * (1 - m) / SQ2), -((lam - 1) * z[1] + lam * (1 + m) / SQ2)]

    hit = lambda _t, z: z[0]  # noqa: E731
    hit.terminal = True
    sol = solve_ivp(rhs, (0, 50), [x0, y0], events=hit, rtol=1e-12, atol=1e-14)
    assert refs.xi_star == pytest.approx(sol.y_events[0][0][1], rel=1e-9)
    assert refs.xi_star == pytest.approx(70.2428090799606, rel=1e-12)


def test_initial_tilde():
    assert model.initial_tilde(model.ref_l(0.0)) == (0.0, 0.0)
    assert model.initial_tilde(model.ref_l()) == pytest.approx((0.176777, 0.176777), abs=1e-6)
    assert model.initial_tilde(model.ref_s(0.5)) == pytest.approx((0.070711, 1.343503), abs=1e-6)


def test_min_bayes_risk():
    p = model.ref_l()
    assert model.min_bayes_risk(p, 0.0) == pytest.approx(0.8)
    assert model.min_bayes_risk(p, -SQ2) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DisorderError) as exc:
        model.min_bayes_risk(p, -2.0)
    assert exc.value.code == errors.V_OUT_OF_RANGE
    with pytest.raises(DisorderError):
        model.min_bayes_risk(p, 0.1)


def test_json_round_trip():
    p = model.ref_s(0.3)
    q = model.ModelParams.from_json(p.to_json())
    assert q == p
    assert json.loads(p.to_json()) == {"lambda": 0.15, "mu": 1.5, "c": 0.7, "m": 0.9, "pi": 0.3}


def test_json_defaults_and_rejections():
    assert model.ModelParams.from_dict({"lambda": 1, "mu": 2, "c": 1, "m": 0}).pi == 0.0
    with pytest.raises(DisorderError) as exc:
        model.ModelParams.from_dict({"lambda": 1, "mu": 2, "c": 1, "m": 0, "nu": 3})
    assert exc.value.code == errors.UNKNOWN_KEY
    with pytest.raises(DisorderError) as exc:
        model.ModelParams.from_dict({"lambda": 1, "mu": 2})
    assert exc.value.code == errors.MISSING_KEY
    with pytest.raises(DisorderError):
        model.ModelParams.from_dict({"lambda": "1", "mu": 2, "c": 1, "m": 0})


def test_params_are_frozen():
    p = model.ref_l()
    with pytest.raises(AttributeError):
        p.lam = 2.0
