import numpy as np
import pytest

from weakon.certify import certify_weak_contraction, epsilon_search
from weakon.combine import (block_jacobian, check_feedback_condition, composite_from_spec,
                            coupling, feedback, hierarchical, parallel)
from weakon.errors import CombineError
from weakon.metrics import BlockScalingMetric, ConstantMetric, generalized_jacobians
from weakon.sampling import Sampler
from weakon.spectra import spectra, sym_part
from weakon.systems import from_dsl, linear, pendulum, vanderpol

rng_points = np.random.default_rng(99)


def scalar(rate, name="s", box=(-2.0, 2.0)):
    return from_dsl(f"dx0 = {-rate}*x0", name, [list(box)])


def diag_system(d, name="d"):
    return linear(np.diag(d), box=[[-1.0, 1.0]] * len(d), name=name)


def test_degenerate_parallel_weight_reproduces_first_system():
    a, b = pendulum(b=0.3), vanderpol()
    comp = parallel(a, b, 1.0, 0.0)
    X = rng_points.uniform(-3, 3, (50, 2))
    np.testing.assert_array_equal(comp.f(X), a.f(X))
    np.testing.assert_array_equal(comp.jac(X), a.jac(X))


def test_parallel_pendulums_add_traces():
    comp = parallel(pendulum(b=0.3), pendulum(b=0.7), 1.0, 1.0)
    X = rng_points.uniform(-6, 6, (200, 2))
    np.testing.assert_allclose(spectra(sym_part(comp.jac(X))).cumulative[:, 1], -1.0, atol=1e-14)


def test_parallel_convexity_on_random_weak_pairs():
    rng = np.random.default_rng(5)
    for _ in range(10):
        ca, cb = rng.uniform(0.1, 2.0, 2)
        a = from_dsl(f"param c = {ca}\ndx0 = x1\ndx1 = -sin(x0) - c*x1", "a", [[-3, 3], [-3, 3]])
        b = from_dsl(f"param c = {cb}\ndx0 = x1 + 0.3*tanh(x0)\ndx1 = -x0 - c*x1", "b",
                     [[-3, 3], [-3, 3]])
        al, be = rng.uniform(0, 2, 2)
        comp = parallel(a, b, al, be)
        X = rng.uniform(-3, 3, (100, 2))
        s2 = lambda sysm: spectra(sym_part(sysm.jac(X))).cumulative[:, 1]  # noqa: E731
        assert np.all(s2(comp) / (al + be) <= np.maximum(s2(a), s2(b)) + 1e-9)


@pytest.mark.parametrize("alpha, beta", [(-1.0, 1.0), (0.0, 0.0), (1.0, -0.5)])
def test_parallel_rejects_bad_weights(alpha, beta):
    with pytest.raises(CombineError):
        parallel(pendulum(), pendulum(), alpha, beta)


def test_parallel_rejects_dimension_and_metric_mismatch():
    with pytest.raises(CombineError):
        parallel(pendulum(), scalar(1.0), 1, 1)
    scaled = pendulum().with_metric(ConstantMetric(np.diag([1.0, 2.0])))
    with pytest.raises(CombineError):
        parallel(pendulum(), scaled, 1, 1)
    same = parallel(scaled, scaled.with_params(b=1.0), 1, 1)
    assert same.metric is scaled.metric


def test_decoupled_feedback_is_union_of_spectra():
    a, b = pendulum(), from_dsl("dx0 = -x0 + x1^2\ndx1 = -3*x1", "b", [[-1, 1], [-1, 1]])
    comp = feedback(a, b, None, 2.0)
    X = rng_points.uniform(-1, 1, (30, 4))
    got = spectra(sym_part(comp.jac(X))).eigenvalues
    union = np.concatenate([spectra(sym_part(a.jac(X[:, :2]))).eigenvalues,
                            spectra(sym_part(b.jac(X[:, 2:]))).eigenvalues], axis=1)
    np.testing.assert_allclose(got, -np.sort(-union, axis=1), atol=1e-14)


def test_unit_gain_feedback_cancels_in_identity_metric():
    comp = feedback(scalar(1.0, "x"), scalar(2.0, "y"), [[5.0]], 1.0)
    Js = sym_part(comp.jac([0.3, -0.2]))
    np.testing.assert_array_equal(Js, np.diag([-1.0, -2.0]))
    assert spectra(Js).cumulative[1] == -3.0


def test_gain_four_needs_the_scaling_metric():
    comp = feedback(scalar(1.0, "x"), scalar(2.0, "y"), [[5.0]], 4.0)
    x = np.array([0.3, -0.2])
    np.testing.assert_array_equal(comp.recommended_metric.matrix, np.diag([1.0, 2.0]))
    F = generalized_jacobians(comp, comp.recommended_metric, x[None])[0]
    np.testing.assert_allclose(sym_part(F), np.diag([-1.0, -2.0]), atol=1e-14)
    raw = spectra(sym_part(comp.jac(x)))
    # the raw symmetric part keeps the coupling: its top eigenvalue moves,
    # while S_2 of a 2x2 matrix is its trace and cannot
    assert raw.lam(1) > 0.0
    assert raw.S(2) == pytest.approx(-3.0)


def test_feedback_rejects_bad_gain_and_shape():
    with pytest.raises(CombineError):
        feedback(pendulum(), scalar(1.0), [[1.0], [1.0]], 0.0)
    with pytest.raises(CombineError):
        feedback(pendulum(), scalar(1.0), [[1.0, 2.0]], 1.0)
    with pytest.raises(CombineError):
        hierarchical(pendulum(), scalar(1.0), [[1.0]])


def test_hierarchical_metric_scales_coupling_block():
    comp = hierarchical(pendulum(), scalar(5.0), [[10.0], [10.0]])
    eps = 0.125
    X = rng_points.uniform(-1, 1, (20, 3))
    Fs = sym_part(generalized_jacobians(comp, comp.metric_family(eps), X))
    G = np.array([[10.0], [10.0]])
    np.testing.assert_allclose(Fs[:, :2, 2:], np.broadcast_to(eps / 2 * G, (20, 2, 1)), atol=1e-12)
    np.testing.assert_allclose(Fs[:, :2, :2], sym_part(pendulum().jac(X[:, :2])), atol=1e-12)


def test_decoupled_hierarchy_certifies_at_any_eps():
    comp = hierarchical(pendulum(), scalar(1.0))
    grid = Sampler("grid", [[-3, 3], [-3, 3], [-1, 1]], 9)
    for eps in (1.0, 0.5, 1e-3):
        assert certify_weak_contraction(comp, comp.metric_family(eps), 2, grid).holds


@pytest.mark.parametrize("kind", ["parallel", "feedback", "hierarchical", "time-varying"])
def test_block_integrity(kind):
    rng = np.random.default_rng(hash(kind) % 2**32)
    a = from_dsl("dx0 = x1 - x0^3\ndx1 = -sin(x0) + 0.2*x1*cos(t)", "a", [[-2, 2], [-2, 2]])
    b = from_dsl("dx0 = -2*x0 + tanh(x0*x0)", "b", [[-2, 2]])
    if kind == "parallel":
        comp = parallel(a, a.with_params(), 0.4, 1.3)
    elif kind == "feedback":
        comp = feedback(a, b, [[1.5], [-0.7]], 2.5)
    elif kind == "hierarchical":
        comp = hierarchical(a, b, [[0.0], [3.0]])
    else:
        comp = feedback(a, b, [["sin(t)"], [0.5]], 1.5)
    for _ in range(100):
        x = rng.uniform(-2, 2, comp.n)
        t = float(rng.uniform(0, 5))
        np.testing.assert_allclose(comp.jac(x, t), block_jacobian(comp, x, t), atol=1e-10)


def test_state_dependent_coupling_is_applied_linearly():
    comp = feedback(scalar(1.0), scalar(1.0), [["x0"]], 1.0)
    assert comp.coupling.state_dependent
    # xa' = -xa + xa*xb, xb' = -xb - xa*xa
    np.testing.assert_allclose(comp.f([2.0, 3.0]), [-2.0 + 6.0, -3.0 - 4.0])


def test_coupling_from_strings_and_numbers():
    G = coupling([["t", 2], [0, "x2"]], 2, 2)
    np.testing.assert_array_equal(G.value(np.array([0.0, 0.0, 5.0, 0.0]), 1.5), [[1.5, 2.0], [0.0, 5.0]])
    assert coupling(None, 2, 1).is_zero(1, 0)
    with pytest.raises(CombineError):
        coupling([[np.inf]], 1, 1)


def test_condition_on_scalar_pair():
    cond = check_feedback_condition(scalar(1.0), scalar(2.0), Sampler("grid", [[-1, 1], [-1, 1]], 5))
    assert cond.holds and cond.margin == 3.0


@pytest.mark.parametrize("c, expected", [(1.0, True), (0.5, False)])
def test_pendulum_with_strong_partner(c, expected):
    grid = Sampler("grid", [[0.0, 2 * np.pi], [-2.0, 2.0], [-1.0, 1.0]], (101, 5, 3))
    cond = check_feedback_condition(pendulum(), scalar(c), grid)
    # sup of the pendulum's top eigenvalue on [0, 2 pi] is (sqrt(17) - 1) / 4
    assert cond.contraction_margin_a == pytest.approx(-(np.sqrt(17) - 1) / 4, abs=1e-12)
    assert cond.holds is expected


@pytest.mark.parametrize("da, db, plain, refined", [
    ([0.5, -3.0], [-1.0, -2.0], True, True),
    ([1.5, -3.0], [-1.0, -2.0], False, False),
    ([1.5, -3.0], [-2.0, -3.0], True, True),
])
def test_refined_case_study(da, db, plain, refined):
    grid = Sampler("grid", [[-1, 1]] * 4, 3)
    cond = check_feedback_condition(diag_system(da, "a"), diag_system(db, "b"), grid)
    assert (cond.margin > 0) is plain
    assert cond.refined is refined


def test_plain_margin_alone_does_not_bound_the_composite():
    a, b = diag_system([-1.0, -1.5], "a"), scalar(2.0, "b", (-1, 1))
    grid = Sampler("grid", [[-1, 1]] * 3, 3)
    cond = check_feedback_condition(a, b, grid)
    assert cond.margin == 3.0
    assert cond.guaranteed_margin == 2.5
    comp = feedback(a, b, [[1.0], [2.0]], 3.0)
    cert = certify_weak_contraction(comp, comp.recommended_metric, 2, grid)
    assert cert.alpha == pytest.approx(2.5)
    assert cert.alpha >= cond.guaranteed_margin - 1e-12


def test_condition_needs_matching_sampler():
    with pytest.raises(CombineError):
        check_feedback_condition(scalar(1.0), scalar(2.0), Sampler("grid", [[-1, 1]], 3))


def test_composites_of_composites_certify():
    inner = feedback(pendulum(), scalar(2.0, "y"), [[0.5], [1.0]], 1.0)
    outer = hierarchical(inner, scalar(4.0, "z"), [[1.0], [0.0], [2.0]])
    grid = Sampler("grid", [[-4, 4], [-3, 3], [-1, 1], [-1, 1]], (17, 9, 5, 3))
    res = epsilon_search(outer, 2, grid)
    assert res.found and res.certificate.holds
    both = parallel(inner, inner.with_params(), 0.5, 0.5)
    assert certify_weak_contraction(both, None, 2, Sampler("grid", inner.box, 7)).holds


def test_composite_from_spec():
    systems = {"p": pendulum(), "y": scalar(3.0, "y")}
    comp = composite_from_spec({"kind": "feedback", "a": "p", "b": "y", "G": [[1], [0]],
                                "gain": 4}, systems.__getitem__)
    assert comp.kind == "feedback" and comp.gain == 4.0
    assert isinstance(comp.recommended_metric, BlockScalingMetric)
    with pytest.raises(CombineError):
        composite_from_spec({"kind": "series", "a": "p", "b": "y"}, systems.__getitem__)
    with pytest.raises(CombineError):
        composite_from_spec({"kind": "parallel", "a": "p"}, systems.__getitem__)


def test_describe_mentions_structure():
    d = feedback(pendulum(), scalar(1.0), [[1], [1]], 4.0).describe()
    assert d["interconnection"]["kind"] == "feedback"
    assert d["interconnection"]["gain"] == 4.0
    assert d["n"] == 3
