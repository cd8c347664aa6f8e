import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srflow.brackets import (
    BracketTable,
    CurveField,
    ad_infinity_span,
    ad_power,
    bracket_along_curve,
    lie_bracket,
)
from srflow.dsl import VectorFieldExpr
from srflow.errors import NotIntegralCurveError
from srflow.flow import PiecewiseControl, integrate_flow, integrate_tangent

XYZ = ("x", "y", "z")


def vf(*comps, coords=XYZ):
    return VectorFieldExpr.parse(list(comps), coords)


def test_heisenberg_bracket():
    assert lie_bracket(vf("1", "0", "-y"), vf("0", "1", "x")) == vf("0", "0", "2")
    assert lie_bracket(vf("1", "0", "-y"), vf("0", "1", "x")).to_basis_string() == "2*dz"


def test_coordinate_fields_commute():
    assert lie_bracket(vf("1", "0", "0"), vf("0", "1", "0")).is_zero()


def test_bracket_x_dy_y_dx():
    c = ("x", "y")
    br = lie_bracket(vf("0", "x", coords=c), vf("y", "0", coords=c))
    assert br == vf("x", "-y", coords=c)
    assert br.to_basis_string() == "x*dx - y*dy"


def test_ad_power_heisenberg():
    Y, Z = vf("1", "0", "-y"), vf("0", "1", "x")
    assert ad_power(Y, Z, 0) is Z
    assert ad_power(Y, Z, 1) == vf("0", "0", "2")
    assert ad_power(Y, Z, 2).is_zero()


def _linear(M, names):
    n = len(names)
    return VectorFieldExpr.parse(
        [" + ".join(f"({int(M[i][j])})*{names[j]}" for j in range(n)) for i in range(n)], names
    )


@given(st.lists(st.integers(-3, 3), min_size=9, max_size=9), st.lists(st.integers(-3, 3), min_size=9, max_size=9))
def test_ad_linear_commutator(a, b):
    A = np.array(a, float).reshape(3, 3)
    B = np.array(b, float).reshape(3, 3)
    names = ["u", "v", "w"]
    got = ad_power(_linear(A, names), _linear(B, names), 1)
    x = np.array([0.3, -1.1, 0.7])
    np.testing.assert_allclose(got(x, 0.0), (B @ A - A @ B) @ x, atol=1e-12)


_polys = st.sampled_from(["x", "y", "z", "x*y", "y^2", "sin(z)", "1", "0", "x*z - y", "exp(x/3)"])


@given(st.lists(_polys, min_size=9, max_size=9))
def test_bracket_identities(c):
    A, B, C = vf(*c[:3]), vf(*c[3:6]), vf(*c[6:])
    pts = [np.array([0.2, -0.4, 0.9]), np.array([1.1, 0.3, -0.5])]
    for p in pts:
        np.testing.assert_allclose(lie_bracket(A, B)(p) + lie_bracket(B, A)(p), 0, atol=1e-12)
        jac = (lie_bracket(A, lie_bracket(B, C)) + lie_bracket(B, lie_bracket(C, A))
               + lie_bracket(C, lie_bracket(A, B)))
        np.testing.assert_allclose(jac(p), 0, atol=1e-10)


def test_bracket_table_residuals():
    t = BracketTable([vf("1", "0", "-y"), vf("0", "1", "x")], depth=3)
    pts = [np.array([0.5, 0.1, -0.3])]
    assert t.antisymmetry_residual(pts) == 0.0
    assert t.jacobi_residual(pts) <= 1e-12
    assert t[(1, 2)] == vf("0", "0", "2")


@pytest.fixture
def heis_curve(heis):
    ctrl = PiecewiseControl([["cos(t)", "sin(2*t)"]])
    X = heis.field_for_control(ctrl)
    return X, integrate_flow(X, [0.1, 0.2, 0.0], 0, 2, mode=1)


def test_bracket_along_curve_restriction(heis_curve):
    X, tr = heis_curve
    W = vf("x*y", "z", "1 + x^2")
    got = bracket_along_curve(X, W, tr)
    for tk, v in zip(got.times, got.values):
        Xt = X.field_at(tk)
        np.testing.assert_allclose(v, lie_bracket(Xt, W)(tr(tk), tk), atol=1e-6)


def test_bracket_along_curve_samples(heis_curve):
    X, tr = heis_curve
    fine = tr.with_grid(np.linspace(0, 2, 401))
    W = vf("x*y", "z", "1 + x^2")
    got = bracket_along_curve(X, W.evaluate_many(fine.states, fine.t), fine)
    ref = bracket_along_curve(X, W, fine)
    inner = slice(5, -5)
    np.testing.assert_allclose(got.values[inner], ref.values[inner], atol=1e-5)


def test_transported_field_has_zero_bracket(heis_curve):
    X, tr = heis_curve
    T = integrate_tangent(None, tr)
    Z = CurveField.transported(T, np.array([0.3, -1.0, 2.0]))
    assert bracket_along_curve(X, Z, tr).max_norm() <= 1e-6



def test_autonomous_self_bracket_zero(heis):
    X = heis.frame[0] + heis.frame[1].scale(0.5)
    tr = integrate_flow(X, [0.0, 0.0, 0.0], 0, 1)
    assert bracket_along_curve(X, X, tr).max_norm() <= 1e-12


def test_ad_infinity_heisenberg(heis):
    X = heis.frame[0]
    tr = integrate_flow(X, [0, 0.5, 0], 0, 1.0)
    _, prof = ad_infinity_span(X, heis.frame, tr)
    assert prof.constant and prof.ranks[0] == 3


def test_ad_infinity_requires_integral_curve(heis):
    tr = integrate_flow(heis.frame[1], [0, 0, 0], 0, 1)
    with pytest.raises(NotIntegralCurveError):
        ad_infinity_span(heis.frame[0], heis.frame, tr)


def test_ad_infinity_engel():
    c = ("x", "y", "z", "w")
    Y = vf("1", "0", "0", "0", coords=c)
    Z = vf("0", "1", "x", "z", coords=c)
    tr = integrate_flow(Y, [0, 0.3, 0.2, 0], 0, 1.5)
    _, prof = ad_infinity_span(Y, [Y, Z], tr)
    assert prof.constant and prof.ranks[0] == 3
    trz = integrate_flow(Z, [0.2, 0, 0, 0], 0, 1.5)
    _, prof = ad_infinity_span(Z, [Y, Z], trz)
    assert prof.constant and prof.ranks[0] == 4


def test_rank_profile_io(tmp_path, heis):
    X = heis.frame[0]
    tr = integrate_flow(X, [0, 0.5, 0], 0, 1.0)
    _, prof = ad_infinity_span(X, heis.frame[:1], tr)
    prof.to_csv(tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0].startswith("t,rank")
    assert len(rows) == len(prof.times) + 1
    assert prof.to_dict()["rank"] == [1] * len(prof.times)
