import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tamed_langevin.drifts import (REGISTRY, Dataset, DriftSpec, FixedFeatureNet, double_well,
                                   linear_drift, nn_objective, silu, silu_prime,
                                   teacher_student_data)
from tamed_langevin.errors import ParameterError
from tamed_langevin.rng import make_rng


def test_double_well_hand_values():
    dw = double_well(1)
    assert dw.eval_h(np.array([0.0]))[0] == 0.0
    assert dw.eval_h(np.array([2.0]))[0] == 6.0
    assert dw.eval_u(np.array([2.0])) == 2.0
    assert np.array_equal(double_well(3).eval_h(np.array([1.0, -1.0, 0.0])), np.zeros(3))


def test_double_well_constants():
    dw = double_well(7)
    assert (dw.a, dw.b, dw.L, dw.ell) == (1.0, 7.0, 2.0, 1.0)
    assert double_well(2, a=3.0).b == 2 * 16 / 4


@given(arrays(float, 5, elements=st.floats(-1e3, 1e3)))
def test_double_well_is_odd(x):
    dw = double_well(5)
    assert np.array_equal(dw.eval_h(-x), -dw.eval_h(x))


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_registered_drifts_dissipative_on_ball(name):
    spec = REGISTRY[name](4)
    rng = make_rng(1)
    g = rng.standard_normal((1000, 4))
    x = g / np.linalg.norm(g, axis=1, keepdims=True) * 50 * rng.random(1000)[:, None] ** 0.25
    slack = np.sum(spec.eval_h(x) * x, axis=1) - spec.a * np.sum(x * x, axis=1) + spec.b
    assert slack.min() >= -1e-9 * (1 + np.sum(x * x, axis=1)).max()


def test_double_well_offset_is_tight():
    # the per-coordinate minimum of x^4 - x^2 - a x^2 is attained at x^2 = (a+1)/2
    dw = double_well(1)
    x = np.array([[math.sqrt(1.0)]])
    assert np.sum(dw.eval_h(x) * x) - dw.a * np.sum(x * x) + dw.b == pytest.approx(0.0, abs=1e-12)


def test_double_well_growth_needs_higher_exponent():
    # |x^3 - x| <= L(1 + |x|^(2 ell)) fails for ell = 1 at moderate |x|, holds for ell = 3/2
    x = np.linspace(-50, 50, 10001)[:, None]
    dw = double_well(1)
    mag = np.abs(dw.eval_h(x))[:, 0]
    norm = np.abs(x[:, 0])
    assert np.any(mag > dw.L * (1 + norm ** 2))
    assert np.all(mag <= dw.L * (1 + norm ** 3))


def test_double_well_gradient_matches_potential():
    dw = double_well(6)
    rng = make_rng(2)
    for _ in range(20):
        x = 3 * rng.standard_normal(6)
        fd = np.empty(6)
        for k in range(6):
            h = 1e-5 * (1 + abs(x[k]))
            e = np.zeros(6)
            e[k] = h
            fd[k] = (dw.eval_u(x + e) - dw.eval_u(x - e)) / (2 * h)
        assert np.max(np.abs(fd - dw.eval_h(x))) <= 1e-5 * np.max(np.abs(fd))


def test_invalid_constants_rejected():
    with pytest.raises(ParameterError):
        double_well(0)
    with pytest.raises(ParameterError):
        double_well(2).with_constants(a=0.0)
    with pytest.raises(ParameterError):
        DriftSpec(dim=1, eval_h=lambda x: x, a=1.0, b=-1.0, L=1.0, ell=0.0, name="bad")


def test_linear_drift():
    lin = linear_drift(3, a=0.5)
    x = np.array([1.0, -2.0, 3.0])
    assert np.allclose(lin.eval_h(x), 0.5 * x)
    assert lin.b == 0.0


def test_silu_derivative():
    x = np.linspace(-8, 8, 101)
    fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6
    assert np.allclose(silu_prime(x), fd, atol=1e-8)


@pytest.fixture
def small_problem():
    train, test = teacher_student_data(3, 5, 4, input_dim=3, teacher_width=6, noise_sd=0.1)
    net = FixedFeatureNet.random(3, 4, seed=9)
    return train, test, net


def test_net_shapes(small_problem):
    train, _, net = small_problem
    assert net.n_params == 2 * net.width == 8
    assert net.predict(np.zeros(8), train.z).shape == (5,)
    with pytest.raises(ParameterError):
        net.split(np.zeros(7))


def test_prediction_formula(small_problem):
    train, _, net = small_problem
    theta = make_rng(0).standard_normal(8)
    w, b = theta[:4], theta[4:]
    z = train.z[0]
    expect = sum(w[i] * silu(net.features[i] @ z + b[i]) for i in range(4))
    assert net.predict(theta, train.z)[0] == pytest.approx(expect, rel=1e-12)


def test_objective_at_zero(small_problem):
    train, _, net = small_problem
    obj = nn_objective(train, net)
    assert obj.eval_u(np.zeros(8)) == pytest.approx(np.mean(train.y ** 2), rel=1e-14)


def test_gradient_single_datum_at_zero_weights():
    z = np.array([[0.3, -1.2]])
    y = np.array([0.7])
    net = FixedFeatureNet.random(2, 3, seed=4)
    obj = nn_objective(Dataset(z, y), net)
    g = obj.eval_h(np.zeros(6))
    assert np.allclose(g[:3], -2 * y[0] * silu(net.features @ z[0]), rtol=1e-13)
    assert np.allclose(g[3:], 0.0)


def test_gradient_matches_finite_differences(small_problem):
    train, _, net = small_problem
    obj = nn_objective(train, net)
    rng = make_rng(11)
    for _ in range(20):
        theta = rng.standard_normal(8)
        g = obj.eval_h(theta)
        fd = np.empty(8)
        for k in range(8):
            h = 1e-5 * (1 + abs(theta[k]))
            e = np.zeros(8)
            e[k] = h
            fd[k] = (obj.eval_u(theta + e) - obj.eval_u(theta - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(fd))


def test_regulariser_gradient(small_problem):
    train, _, net = small_problem
    obj = nn_objective(Dataset(train.z, np.zeros(5)), net)
    # with W = 0 the data term has zero gradient, leaving eta * theta^5
    theta = np.concatenate([np.zeros(4), np.linspace(-1, 1, 4)])
    assert np.allclose(obj.eval_h(theta), net.reg_eta * theta ** 5, atol=1e-15)


def test_minibatch_of_everything_is_full_gradient(small_problem):
    train, _, net = small_problem
    obj = nn_objective(train, net)
    theta = make_rng(5).standard_normal(8)
    full = obj.minibatch(np.arange(len(train)))
    assert np.allclose(full.eval_h(theta), obj.eval_h(theta), rtol=1e-14, atol=1e-15)
    assert full.eval_u(theta) == pytest.approx(obj.eval_u(theta), rel=1e-14)


def test_minibatch_needs_data():
    with pytest.raises(ParameterError):
        double_well(2).minibatch(np.arange(2))


def test_objective_dimension_mismatch(small_problem):
    train, _, _ = small_problem
    with pytest.raises(ParameterError):
        nn_objective(train, FixedFeatureNet.random(5, 4, seed=0))


def test_teacher_data_deterministic_and_noiseless():
    a = teacher_student_data(1, 50, 10, 20, 80, 0.05)
    b = teacher_student_data(1, 50, 10, 20, 80, 0.05)
    assert np.array_equal(a[0].z, b[0].z) and np.array_equal(a[1].y, b[1].y)
    assert a[0].z.shape == (50, 20) and len(a[1]) == 10
    clean = teacher_student_data(1, 50, 10, 20, 80, 0.0)
    noisy = teacher_student_data(1, 50, 10, 20, 80, 0.05)
    assert np.array_equal(clean[0].z, noisy[0].z)
    resid = noisy[0].y - clean[0].y
    assert 0.02 < resid.std() < 0.08
    with pytest.raises(ParameterError):
        teacher_student_data(1, 0, 10, 20, 80, 0.05)


def test_dataset_roundtrip(tmp_path):
    train, _ = teacher_student_data(2, 7, 1, 3, 5, 0.1)
    path = tmp_path / "train.csv"
    train.save(path)
    assert path.read_text().splitlines()[0] == "z1,z2,z3,y"
    back = Dataset.load(path)
    assert np.array_equal(back.z, train.z) and np.array_equal(back.y, train.y)
