import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tamed_langevin.drifts import double_well, linear_drift
from tamed_langevin.errors import ParameterError
from tamed_langevin.rng import make_rng
from tamed_langevin.taming import (TamingConstants, check_dissipativity, check_growth,
                                   check_lipschitz, check_pointwise_convergence,
                                   check_taming_error, lambda_max_ktula,
                                   lambda_max_trlmc_computable, lipschitz_bound, sample_ball,
                                   tame, taming_error_ratio, taming_error_sides)

lams = st.floats(1e-6, 0.999)


def test_hand_value():
    dw = double_well(1, a=0.5)
    assert tame(dw, 0.25)(np.array([2.0]))[0] == pytest.approx(1 + math.sqrt(5), rel=1e-14)


@given(lam=lams, x=arrays(float, 3, elements=st.floats(-1e4, 1e4)))
def test_linear_drift_unchanged(lam, x):
    lin = linear_drift(3, a=0.7)
    assert np.array_equal(tame(lin, lam)(x), lin.eval_h(x))


@given(lam=lams)
def test_origin_fixed(lam):
    dw = double_well(4)
    assert np.array_equal(tame(dw, lam)(np.zeros(4)), dw.eval_h(np.zeros(4)))


@given(lam=lams, x=arrays(float, 2, elements=st.floats(-1e3, 1e3)))
def test_matches_closed_form(lam, x):
    dw = double_well(2)
    n = float(x @ x)
    expect = x + (x ** 3 - 2 * x) / math.sqrt(1 + lam * n ** 2)
    assert np.allclose(tame(dw, lam)(x), expect, rtol=1e-12, atol=1e-12)


def test_batch_evaluation_matches_rows():
    dw = double_well(5)
    x = make_rng(0).standard_normal((7, 5)) * 4
    td = tame(dw, 0.01)
    assert np.allclose(td(x), np.stack([td(r) for r in x]), rtol=0, atol=0)


@pytest.mark.parametrize("lam", [0.0, 1.0, -0.1, 2.0])
def test_lambda_domain(lam):
    with pytest.raises(ParameterError):
        tame(double_well(1), lam)


def test_constants_hand_arithmetic():
    c = TamingConstants.from_drift(double_well(3))
    assert c.L0 == 20.0
    assert c.lambda_max_ktula == pytest.approx(1 / 14400, rel=1e-15)
    assert lambda_max_ktula(double_well(1)) == c.lambda_max_ktula


def test_constants_tie_at_one_eighth():
    dw = double_well(1, a=1 / 8, L=1e-6, ell=0.0)
    assert 1 / (8 * dw.a) == 1.0
    assert lambda_max_trlmc_computable(dw) == 1.0


def test_lambda_max_monotone_in_L():
    vals = [lambda_max_ktula(double_well(1, L=L)) for L in np.linspace(0.1, 20, 50)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert all(0 < v <= 1 for v in vals)


def test_dissipativity_origin_slack_is_b():
    rep = check_dissipativity(tame(double_well(1), 0.1), np.zeros((1, 1)))
    assert rep.worst_slack == 1.0 and rep.passed


def test_dissipativity_linear_slack_is_b():
    lin = linear_drift(3, a=2.0)
    x = make_rng(1).standard_normal((50, 3)) * 10
    rep = check_dissipativity(tame(lin, 0.5), x)
    assert rep.worst_slack == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("lam", [0.1, 0.01, 0.001])
def test_dissipativity_sweep_d100(lam):
    x = 10 * make_rng(2).standard_normal((1000, 100))
    rep = check_dissipativity(tame(double_well(100), lam), x)
    assert rep.passed and rep.worst_slack >= 0


def test_taming_error_zero_at_origin():
    lhs, _ = taming_error_sides(tame(double_well(2), 0.1), np.zeros(2))
    assert lhs == 0.0


def test_taming_error_explicit_margin():
    rep = check_taming_error(tame(double_well(1), 0.01), np.array([[5.0]]))
    assert rep.passed and rep.worst_slack > 0.5


def test_taming_error_is_order_lambda():
    x = np.array([1.3, -0.4])
    lambdas = 10.0 ** -np.arange(1, 7)
    ratio = taming_error_ratio(double_well(2), x, lambdas)
    # |h - h_lam| / lam tends to a finite limit |h(x) - a x| |x|^4 / 2
    limit = np.linalg.norm(x ** 3 - 2 * x) * float(x @ x) ** 2 / 2
    assert np.all(np.isfinite(ratio)) and ratio.max() <= 1.01 * limit
    assert ratio[-1] == pytest.approx(limit, rel=1e-4)


def test_taming_error_bound_fails_for_small_lambda_far_out():
    # the quadratic-in-lambda bound needs the growth assumption, which the cubic
    # drift violates at ell = 1; far from the origin and for small lambda it breaks
    rep = check_taming_error(tame(double_well(1), 1e-6), np.array([[37.0]]))
    assert not rep.passed


@settings(max_examples=50)
@given(lam=st.sampled_from([0.1, 0.01, 0.001]),
       x=arrays(float, 4, elements=st.floats(-100, 100)))
def test_taming_error_bound_property(lam, x):
    assert check_taming_error(tame(double_well(4), lam), x[None]).passed


def test_lipschitz_linear_ratio_is_a():
    lin = linear_drift(2, a=0.3)
    rng = make_rng(3)
    x, y = rng.standard_normal((2, 100, 2))
    rep = check_lipschitz(tame(lin, 0.01), (x, y))
    assert lipschitz_bound(tame(lin, 0.01)) - rep.worst_slack == pytest.approx(0.3, rel=1e-12)


def test_lipschitz_skips_coincident_pairs():
    x = np.ones((3, 2))
    rep = check_lipschitz(tame(double_well(2), 0.1), (x, x))
    assert rep.n_points == 0 and rep.passed


def test_lipschitz_sweep():
    rng = make_rng(4)
    td = tame(double_well(3), 0.01)
    x = sample_ball(rng, 10_000, 3, 10.0)
    y = sample_ball(rng, 10_000, 3, 10.0)
    rep = check_lipschitz(td, (x, y))
    assert rep.passed and lipschitz_bound(td) == pytest.approx(200.0)


def test_growth_reports_shape():
    poly, lin = check_growth(tame(double_well(2), 0.1), make_rng(5).standard_normal((20, 2)))
    assert poly.check == "growth_poly" and lin.check == "growth_linear"


def test_pointwise_convergence():
    x = make_rng(6).standard_normal((200, 10)) * 5
    assert check_pointwise_convergence(double_well(10), x).passed


def test_report_serialisation():
    rep = check_dissipativity(tame(double_well(1), 0.1), np.zeros((1, 1)))
    d = json.loads(rep.to_json())
    assert d["lambda"] == 0.1 and d["pass"] is True and d["check"] == "dissipativity"
    assert rep.line().startswith("PASS dissipativity")


def test_points_dimension_checked():
    with pytest.raises(ParameterError):
        check_dissipativity(tame(double_well(3), 0.1), np.zeros((4, 2)))


def test_sample_ball_radius():
    pts = sample_ball(make_rng(7), 5000, 4, 2.5)
    r = np.linalg.norm(pts, axis=1)
    assert r.max() <= 2.5
    # radius of a uniform point in a 4-ball has cdf (r/R)^4
    assert np.mean(r <= 2.5 * 0.5 ** 0.25) == pytest.approx(0.5, abs=0.03)
