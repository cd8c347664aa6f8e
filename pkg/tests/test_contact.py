import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srflow.contact import (
    ProjectiveCovector,
    cone_contains,
    contact_lift_flow,
    contact_tangency_check,
    extended_candidate,
    generating_function,
    needle_cone,
    normalize_covector,
    separation_certificate,
    supporting_hyperplane,
)
from srflow.errors import TransversalityError
from srflow.extremal import (
    ExtremalCandidate,
    abnormal_test,
    integrate_normal_geodesic,
    normal_test,
    paraboloid_tangent,
)
from srflow.flow import PiecewiseControl, integrate_adjoint, integrate_tangent

CIRCLE = PiecewiseControl([["cos(t)", "sin(t)"]])


@pytest.fixture
def heis_ext(heis):
    tr = extended_candidate(heis, CIRCLE, [0, 0, 0], 0, 2)
    return tr, integrate_tangent(None, tr)


def _spec(rng, k, t_max):
    return [(rng.uniform(0, t_max), rng.normal(size=2), rng.uniform(0, 1)) for _ in range(k)]


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.floats(0.1, 10))
def test_normalization_projective(v, s):
    a = normalize_covector(v)
    np.testing.assert_allclose(a, normalize_covector(np.multiply(v, -s)), atol=1e-12)
    assert ProjectiveCovector([0, 0, 0], v) == ProjectiveCovector([0, 0, 0], np.multiply(v, s))


def test_kernel_basis():
    h = ProjectiveCovector([0, 0, 0, 0], [1, 2, 3, -1])
    K = h.kernel_basis()
    assert K.shape == (4, 3)
    np.testing.assert_allclose(h.covector @ K, 0, atol=1e-14)
    np.testing.assert_allclose(K.T @ K, np.eye(3), atol=1e-12)


def test_generating_function():
    h = ProjectiveCovector([0, 0, 0, 0], [1, 2, 3, -1])
    assert generating_function(h, [1, 0, 0, 0], [0, 0, 0, -1]) == pytest.approx(1.0)
    with pytest.raises(TransversalityError):
        generating_function(h, [1, 0, 0, 0], [3, 0, -1, 0])


def test_lift_matches_geodesic_covector(heis, heis_ext):
    tr, T = heis_ext
    geo = integrate_normal_geodesic(heis, [0, 0, 0], [1, 0, 0.5], 2)
    X = heis.extended_field(CIRCLE)
    lift = contact_lift_flow(X, tr, geo.covector_ext(0.0))
    for k in (len(lift.times) // 2, -1):
        t = lift.times[k]
        np.testing.assert_allclose(lift.covectors[k], normalize_covector(geo.covector_ext(t)), atol=1e-8)
    _, defects = contact_tangency_check(X, lift)
    assert defects.max() <= 1e-8
    assert lift.evolution_defect() <= 1e-8


def test_adjoint_lift_invariant_under_scaling(heis, heis_ext):
    tr, _ = heis_ext
    X = heis.extended_field(CIRCLE)
    h0 = np.array([0.3, -0.2, 0.5, -1.0])
    a = contact_lift_flow(X, tr, h0)
    b = contact_lift_flow(X, tr, -7.0 * h0)
    np.testing.assert_allclose(a.covectors, b.covectors, atol=1e-12)


def test_cone_ordering(heis, heis_ext, rng):
    tr, T = heis_ext
    spec = _spec(rng, 25, 2.0)
    big = needle_cone(heis, CIRCLE, tr, spec, t=2.0, transport=T)
    early = needle_cone(heis, CIRCLE, tr, [s for s in spec if s[0] <= 1.0], t=1.0, transport=T)
    moved = early.transported(T, 2.0)
    for r in moved.rays:
        inside, misfit = cone_contains(big, r)
        assert inside, misfit


def test_cone_excludes_cost_decrease(heis, heis_ext, rng):
    tr, T = heis_ext
    cone = needle_cone(heis, CIRCLE, tr, _spec(rng, 25, 2.0), t=2.0, transport=T)
    assert not cone_contains(cone, [0, 0, 0, -1])[0]


def test_needle_validation(heis, heis_ext):
    tr, T = heis_ext
    with pytest.raises(ValueError):
        needle_cone(heis, CIRCLE, tr, [(0.5, [1, 0], -0.1)], transport=T)
    ctrl = PiecewiseControl([["1", "0"], ["0", "1"]], [1.0])
    tr2 = extended_candidate(heis, ctrl, [0, 0, 0], 0, 2)
    with pytest.raises(ValueError):
        needle_cone(heis, ctrl, tr2, [(1.0, [1, 0], 0.1)])


def test_normal_separation_strict(heis, heis_ext, rng):
    tr, T = heis_ext
    geo = integrate_normal_geodesic(heis, [0, 0, 0], [1, 0, 0.5], 2)
    cone = needle_cone(heis, CIRCLE, tr, _spec(rng, 40, 2.0), t=2.0, transport=T)
    rep = separation_certificate(cone, geo.covector_ext(2.0))
    assert rep.separates and rep.strict and not rep.ray_in_plane


def test_abnormal_ray_in_plane(martinet, rng):
    ctrl = PiecewiseControl([["0", "1"]])
    tr = extended_candidate(martinet, ctrl, [0, 0, 0], 0, 2)
    T = integrate_tangent(None, tr)
    lam = integrate_adjoint(None, tr, [0, 0, 1, 0]).at(2.0)
    cone = needle_cone(martinet, ctrl, tr, _spec(rng, 30, 2.0), t=2.0, transport=T)
    rep = separation_certificate(cone, lam)
    assert rep.separates and rep.ray_in_plane and not rep.strict


def test_supporting_hyperplane_normal(heis):
    c = ExtremalCandidate.from_control(heis, CIRCLE, [0, 0, 0], 0, 2)
    curve = supporting_hyperplane(c, normal_test(c))
    assert curve.evolution_defect() <= 1e-8
    for k in range(0, len(curve.times), 7):
        t = curve.times[k]
        lam = curve.covectors[k]
        q = curve.base(t)[:3]
        u = c.control_at(t)
        # u^ maximizes the pairing over the unit circle of controls
        vs = np.array([[np.cos(a), np.sin(a)] for a in np.linspace(0, 2 * np.pi, 64)])
        top = lam @ heis.extended_velocity(q, u)
        assert all(lam @ heis.extended_velocity(q, v) <= top + 1e-6 for v in vs)
        P = paraboloid_tangent(heis, q, u)
        assert np.abs(lam @ P).max() <= 1e-6


def test_supporting_hyperplane_abnormal(martinet):
    c = ExtremalCandidate.from_feedback(martinet, ["0", "1"], [0, 0, 0], 0, 1)
    curve = supporting_hyperplane(c, abnormal_test(c))
    assert np.abs(curve.covectors[:, -1]).max() <= 1e-12
    for t, lam in zip(curve.times, curve.covectors):
        F = martinet.frame_matrix(curve.base(t)[:3])
        assert np.abs(lam[:3] @ F).max() <= 1e-8


def test_supporting_hyperplane_rejects_uncertified(heis):
    c = ExtremalCandidate.from_control(heis, CIRCLE, [0, 0, 0], 0, 2)
    with pytest.raises(ValueError):
        supporting_hyperplane(c, abnormal_test(c))
