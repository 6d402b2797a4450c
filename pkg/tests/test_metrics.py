import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakon.combine import feedback
from weakon.errors import MetricError
from weakon.metrics import (AugmentedMetric, BlockScalingMetric, ConstantMetric, IdentityMetric,
                            StateTimeMetric, StorageFunction, augment_storage, feedback_metric,
                            generalized_jacobian, generalized_jacobians, hierarchical_metric,
                            theta_dot)
from weakon.spectra import spectra, sym_part
from weakon.systems import from_dsl, pendulum, vanderpol

from helpers import random_symmetric


def _exp_sin_metric(n, finite_difference=False):
    theta = lambda x, t: math.exp(math.sin(t)) * np.eye(n)  # noqa: E731
    dt = lambda x, t: math.cos(t) * math.exp(math.sin(t)) * np.eye(n)  # noqa: E731
    if finite_difference:
        return StateTimeMetric(n, theta, finite_difference=True)
    return StateTimeMetric(n, theta, dt)


def _state_metric(finite_difference=False):
    # Theta(x) = [[1, x0], [0, 2 + sin(x1)]]
    def theta(x, t):
        return np.array([[1.0, x[0]], [0.0, 2.0 + math.sin(x[1])]])

    def dx(x, t):
        d = np.zeros((2, 2, 2))
        d[0, 0, 1] = 1.0
        d[1, 1, 1] = math.cos(x[1])
        return d
    if finite_difference:
        return StateTimeMetric(2, theta, finite_difference=True)
    return StateTimeMetric(2, theta, dtheta_dx=dx)


def test_constant_metric_has_zero_derivative():
    m = ConstantMetric([[2.0, 1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(theta_dot(m, [0.3, 0.1], 0.5, [1.0, -1.0]), np.zeros((2, 2)))


def test_exp_sin_derivative_at_zero_is_identity():
    m = _exp_sin_metric(3)
    np.testing.assert_allclose(m.theta_dot(np.zeros(3), 0.0, np.zeros(3)), np.eye(3), atol=1e-15)


@pytest.mark.parametrize("make", [_exp_sin_metric, lambda fd: _state_metric(fd)])
def test_finite_difference_mode_matches_suppliers(make):
    exact = make(2) if make is _exp_sin_metric else make(False)
    approx = make(2, True) if make is _exp_sin_metric else make(True)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, t, v = rng.normal(size=2), float(rng.uniform(-3, 3)), rng.normal(size=2)
        np.testing.assert_allclose(approx.theta_dot(x, t, v), exact.theta_dot(x, t, v), atol=1e-5)


def test_identity_metric_returns_jacobian_exactly():
    vdp = vanderpol()
    X = np.random.default_rng(1).normal(size=(30, 2))
    np.testing.assert_array_equal(generalized_jacobians(vdp, IdentityMetric(2), X), vdp.jac(X))
    np.testing.assert_array_equal(generalized_jacobians(vdp, None, X), vdp.jac(X))


def test_constant_metric_is_a_similarity():
    vdp = vanderpol()
    Theta = np.array([[2.0, 0.5], [-0.3, 1.5]])
    m = ConstantMetric(Theta)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=2)
        F = generalized_jacobian(vdp, m, x).F
        np.testing.assert_allclose(F, Theta @ vdp.jac(x) @ np.linalg.inv(Theta), atol=1e-12)


def test_state_dependent_metric_against_flow_difference():
    # independent oracle: d/dt Theta(x(t)) by stepping along f in both directions
    vdp = vanderpol()
    m = _state_metric()
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(-1, 1, 2)
        f = vdp.f(x)
        h = 1e-6
        tdot = (m.theta(x + h * f) - m.theta(x - h * f)) / (2 * h)
        Theta = m.theta(x)
        expected = (Theta @ vdp.jac(x) + tdot) @ np.linalg.inv(Theta)
        np.testing.assert_allclose(generalized_jacobian(vdp, m, x).F, expected, atol=1e-7)


def test_symmetric_part_is_exact():
    g = generalized_jacobian(vanderpol(), _state_metric(), [0.4, -0.2])
    np.testing.assert_array_equal(g.F_s, 0.5 * (g.F + g.F.T))


def test_storage_shifts_jacobian_by_gamma_dot():
    pend = pendulum()
    storage = StorageFunction.from_dsl("0.1*sin(t)", 2, bound=0.1)
    aug = augment_storage(IdentityMetric(2), storage)
    rng = np.random.default_rng(4)
    X = rng.uniform(-3, 3, (50, 2))
    T = rng.uniform(0, 20, 50)
    F = generalized_jacobians(pend, aug, X, T)
    shift = F - pend.jac(X, T)
    np.testing.assert_allclose(shift, 0.1 * np.cos(T)[:, None, None] * np.eye(2), atol=1e-8)
    s_e, s = spectra(sym_part(F)).cumulative, spectra(sym_part(pend.jac(X))).cumulative
    for i in (1, 2):
        np.testing.assert_allclose(s_e[:, i - 1], s[:, i - 1] + i * 0.1 * np.cos(T), atol=1e-8)


def test_state_dependent_storage_uses_total_derivative():
    pend = pendulum()
    storage = StorageFunction.from_dsl("0.05*x0*x1", 2, bound=10.0)
    aug = augment_storage(IdentityMetric(2), storage)
    x = np.array([0.7, -0.4])
    f = pend.f(x)
    gdot = 0.05 * (f[0] * x[1] + x[0] * f[1])
    F = generalized_jacobian(pend, aug, x).F
    np.testing.assert_allclose(F, pend.jac(x) + gdot * np.eye(2), atol=1e-12)


def test_zero_storage_leaves_metric_unchanged():
    vdp = vanderpol()
    aug = augment_storage(IdentityMetric(2), StorageFunction.from_dsl("0", 2, bound=0.0))
    X = np.random.default_rng(5).normal(size=(20, 2))
    np.testing.assert_allclose(generalized_jacobians(vdp, aug, X), vdp.jac(X), atol=0)


def test_storage_needs_bound():
    with pytest.raises(MetricError):
        StorageFunction.from_dsl("sin(t)", 2, bound=None)
    with pytest.raises(MetricError):
        StorageFunction(lambda x, t: 0.0, lambda x, t, v: 0.0, bound=math.inf)
    with pytest.raises(MetricError):
        augment_storage(IdentityMetric(2), "0.1*sin(t)")


def test_storage_bound_is_enforced():
    s = StorageFunction.from_dsl("x0", 1, bound=0.5)
    s.check(np.array([[0.5]]), np.zeros(1))
    with pytest.raises(MetricError):
        s.check(np.array([[0.6]]), np.zeros(1))


def test_singular_and_ill_conditioned_metrics_are_rejected():
    with pytest.raises(MetricError):
        ConstantMetric([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(MetricError):
        ConstantMetric(np.diag([1.0, 1e-9]))
    with pytest.raises(MetricError):
        BlockScalingMetric([(1, 1.0), (1, 0.0)])
    m = StateTimeMetric(2, lambda x, t: np.diag([1.0, x[0]]), finite_difference=True)
    with pytest.raises(MetricError):
        generalized_jacobian(vanderpol(), m, [0.0, 1.0])


def test_dimension_mismatch():
    with pytest.raises(MetricError):
        generalized_jacobians(vanderpol(), ConstantMetric(np.eye(3)), np.zeros((1, 2)))


def test_block_scaling_and_helpers():
    np.testing.assert_array_equal(feedback_metric(2, 1, 4.0).matrix, np.diag([1.0, 1.0, 2.0]))
    np.testing.assert_array_equal(hierarchical_metric(1, 2, 0.25).matrix, np.diag([0.25, 1.0, 1.0]))
    assert hierarchical_metric(1, 1, 2.0**-40).condition_cap >= 2.0**40


def test_feedback_metric_cancels_coupling_in_symmetric_part():
    fa = pendulum()
    fb = from_dsl("dx0 = -x0 + x1^3\ndx1 = -2*x1", "b", [[-1, 1], [-1, 1]])
    G = [[1.5, -0.5], [0.25, 2.0]]
    k = 3.0
    comp = feedback(fa, fb, G, k)
    X = np.random.default_rng(6).uniform(-1, 1, (40, 4))
    Fs = sym_part(generalized_jacobians(comp, comp.recommended_metric, X))
    assert np.max(np.abs(Fs[:, :2, 2:])) <= 1e-10
    assert np.max(np.abs(Fs[:, 2:, :2])) <= 1e-10


def test_augmented_metric_description():
    aug = AugmentedMetric(IdentityMetric(2), StorageFunction.from_dsl("0.1*sin(t)", 2, 0.1))
    d = aug.describe()
    assert d["kind"] == "storage" and d["storage"]["bound"] == 0.1


@settings(max_examples=100)
@given(st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2**32 - 1))
def test_spectral_shift(n, c, seed):
    H = random_symmetric(np.random.default_rng(seed), n, scale=3.0)
    np.testing.assert_allclose(spectra(H + c * np.eye(n)).eigenvalues,
                               spectra(H).eigenvalues + c, atol=1e-9)
