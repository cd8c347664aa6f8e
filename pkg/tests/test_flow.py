import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from srflow.dsl import VectorFieldExpr
from srflow.errors import BlowUpError, DomainError, NonFiniteError, StepSizeError
from srflow.flow import (
    TDVF,
    PiecewiseControl,
    flow_map,
    integral_curve_residual,
    integrate_adjoint,
    integrate_flow,
    integrate_tangent,
)

XYZ = ("x", "y", "z")


def linear_field(A):
    n = len(A)
    names = [f"x{i + 1}" for i in range(n)]
    comps = [" + ".join(f"({A[i][j]!r})*{names[j]}" for j in range(n)) for i in range(n)]
    return VectorFieldExpr.parse(comps, names)


def test_closed_form_flow():
    X = VectorFieldExpr.parse(["0", "1", "x^2"], XYZ)
    tr = integrate_flow(X, [1, 0, 0], 0, 2)
    np.testing.assert_allclose(tr.states[-1], [1, 2, 2], atol=1e-8)
    # dense output against the closed form (x, y + t, z + x^2 t)
    ts = np.linspace(0, 2, 37)
    np.testing.assert_allclose(tr(ts), np.column_stack([np.ones_like(ts), ts, ts]), atol=1e-8)


def test_zero_field_is_constant():
    tr = integrate_flow(VectorFieldExpr.zero(XYZ), [0.3, -1, 2], 0, 5)
    np.testing.assert_array_equal(tr.states, np.tile([0.3, -1, 2], (len(tr.t), 1)))


def test_heisenberg_loop_closes(heis):
    ctrl = PiecewiseControl([["cos(t)", "sin(t)"]])
    tr = integrate_flow(heis.field_for_control(ctrl), [0, 0, 0], 0, 2 * math.pi)
    assert np.max(np.abs(tr.states[-1, :2])) <= 1e-6
    # enclosed area 2*pi times the bracket coefficient
    assert tr.states[-1, 2] == pytest.approx(2 * math.pi, abs=1e-6)


def test_nilpotent_tangent():
    X = linear_field([[0.0, 1.0], [0.0, 0.0]])
    tr = integrate_flow(X, [0.4, 1.0], 0, 1.7, mode=1)
    T = integrate_tangent(None, tr)
    for t in (0.0, 0.5, 1.7):
        np.testing.assert_allclose(T.at(t), [[1, t], [0, 1]], atol=1e-10)


@pytest.mark.parametrize("c,T", [(0.7, 2.0), (-1.3, 0.5)])
def test_tangent_closed_form(c, T):
    X = VectorFieldExpr.parse(["0", "1", "x^2"], XYZ)
    tr = integrate_flow(X, [c, 0, 0], 0, T, mode=1)
    V = integrate_tangent(None, tr).at(T)
    want = np.eye(3)
    want[2, 0] = 2 * c * T
    np.testing.assert_allclose(V, want, atol=1e-9)


def fd_jac(X, x0, t0, t1, h=1e-5):
    n = len(x0)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (flow_map(X, t0, t1, x0 + e, 1e-12) - flow_map(X, t0, t1, x0 - e, 1e-12)) / (2 * h)
    return J


def test_tangent_vs_finite_difference(heis):
    ctrl = PiecewiseControl([["cos(2*t)", "1 + t"], ["t", "-1"]], [0.8])
    X = heis.field_for_control(ctrl)
    x0 = np.array([0.2, -0.1, 0.3])
    tr = integrate_flow(X, x0, 0, 1.5, mode=1)
    V = integrate_tangent(None, tr).at(1.5)
    J = fd_jac(X, x0, 0, 1.5)
    assert np.max(np.linalg.norm(V - J, axis=0) / np.linalg.norm(J, axis=0)) <= 1e-4


def test_adjoint_linear_matches_expm(rng):
    A = rng.normal(size=(3, 3)) * 0.5
    X = linear_field(A.tolist())
    lam0 = rng.normal(size=3)
    tr = integrate_flow(X, rng.normal(size=3), 0, 1.2)
    cov = integrate_adjoint(X, tr, lam0)
    for t in (0.3, 1.2):
        np.testing.assert_allclose(cov.at(t), lam0 @ expm(-A * t), atol=1e-9)


def test_adjoint_zero_field_constant():
    tr = integrate_flow(VectorFieldExpr.zero(XYZ), [1, 2, 3], 0, 1)
    cov = integrate_adjoint(None, tr, [1.0, -2.0, 0.5])
    np.testing.assert_allclose(cov.covectors, np.tile([1.0, -2.0, 0.5], (len(tr.t), 1)))


def test_pairing_conservation(heis, rng):
    ctrl = PiecewiseControl([["cos(t^2)", "sin(3*t)"]])
    X = heis.field_for_control(ctrl)
    tr = integrate_flow(X, [0.1, 0.2, 0.3], 0, 2)
    cov = integrate_adjoint(X, tr, rng.normal(size=3))
    assert cov.pairing_defect(rng.normal(size=(20, 3))) <= 1e-8


def test_flow_map_identity_and_composition(heis, rng):
    for _ in range(5):
        a, b, g = rng.normal(size=3)
        ctrl = PiecewiseControl([[f"cos({a}*t + {g})", f"sin({b}*t)"]])
        X = heis.field_for_control(ctrl)
        x = rng.normal(size=3)
        np.testing.assert_array_equal(flow_map(X, 0.4, 0.4, x), x)
        mid = flow_map(X, 0.0, 0.7, x)
        np.testing.assert_allclose(flow_map(X, 0.7, 1.5, mid), flow_map(X, 0.0, 1.5, x), atol=1e-8)
        back = flow_map(X, 1.5, 0.0, flow_map(X, 0.0, 1.5, x))
        np.testing.assert_allclose(back, x, atol=1e-8)


def test_breakpoints_are_grid_points(heis):
    ctrl = PiecewiseControl([["1", "0"], ["0", "1"], ["-1", "0"]], [0.3, 1.1])
    tr = integrate_flow(heis.field_for_control(ctrl), [0, 0, 0], 0, 2)
    for b in (0.3, 1.1):
        assert np.any(tr.t == b)
        assert tr.is_breakpoint(b)
    # one-sided velocities at a corner
    np.testing.assert_allclose(tr.velocity(0.3, -1)[:2], [1, 0])
    np.testing.assert_allclose(tr.velocity(0.3, 1)[:2], [0, 1])


def test_backward_integration(heis):
    ctrl = PiecewiseControl([["cos(t)", "sin(t)"]])
    X = heis.field_for_control(ctrl)
    fw = integrate_flow(X, [0, 0, 0], 0, 1.5)
    bw = integrate_flow(X, fw.states[-1], 1.5, 0)
    np.testing.assert_allclose(bw(0.0), [0, 0, 0], atol=1e-9)
    np.testing.assert_allclose(bw(0.8), fw(0.8), atol=1e-9)


def test_blowup_reported():
    X = VectorFieldExpr.parse(["x^2"], ["x"])
    with pytest.raises(BlowUpError):
        integrate_flow(X, [1.0], 0, 2, bound=1e6)


def test_domain_error_names_expression():
    X = VectorFieldExpr.parse(["-1", "ln(x)"], ["x", "y"])
    with pytest.raises(DomainError) as info:
        integrate_flow(X, [1.0, 0.0], 0, 2)
    assert "ln(x)" in str(info.value)


def test_singularity_gives_step_size_error():
    # x' = -1/x reaches x = 0 at t = 1/2
    X = VectorFieldExpr.parse(["-1/x"], ["x"])
    with pytest.raises((StepSizeError, NonFiniteError)):
        integrate_flow(X, [1.0], 0, 1)


def test_integral_curve_residual(heis):
    ctrl = PiecewiseControl([["1", "t"]])
    tr = integrate_flow(heis.field_for_control(ctrl), [0, 0, 0], 0, 1)
    assert integral_curve_residual(tr) <= 1e-8
    other = TDVF.from_field(heis.frame[0])
    assert integral_curve_residual(tr, other) > 0.1


def test_csv_and_dict(tmp_path, heis):
    ctrl = PiecewiseControl([["1", "t"]])
    tr = integrate_flow(heis.field_for_control(ctrl), [0, 0, 0], 0, 1)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,x_1,x_2,x_3,u_1,u_2"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 0], tr.t)
    np.testing.assert_allclose(data[:, 5], tr.t, atol=1e-15)
    d = tr.to_dict()
    assert d["coords"] == list(XYZ) and len(d["states"]) == len(tr.t)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 2.0))
def test_flow_property_random_linear(a, b, T):
    # linear 2x2 flows: integrate against expm
    A = np.array([[0.3 * a, b], [-b, 0.2]])
    X = linear_field(A.tolist())
    x0 = np.array([1.0, -0.5])
    tr = integrate_flow(X, x0, 0, T)
    np.testing.assert_allclose(tr.states[-1], expm(A * T) @ x0, rtol=1e-8, atol=1e-8)
