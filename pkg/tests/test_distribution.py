import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srflow.distribution import (
    FrameAlongCurve,
    gram_schmidt_along,
    invariance_check,
    transport_closure,
)
from srflow.dsl import VectorFieldExpr
from srflow.errors import RankError
from srflow.flow import integrate_flow

XYZ = ("x", "y", "z")


def vf(*comps, coords=XYZ):
    return VectorFieldExpr.parse(list(comps), coords)


@pytest.fixture
def heis_line(heis):
    X = heis.frame[0]
    return X, integrate_flow(X, [0.0, 0.0, 0.0], 0, 1.0, mode=1)


@pytest.fixture
def martinet_line(martinet):
    X = martinet.frame[1]
    return X, integrate_flow(X, [0.0, 0.0, 0.0], 0, 1.0, mode=1)


def test_martinet_closure_rank_2(martinet, martinet_line):
    X, tr = martinet_line
    D = FrameAlongCurve.from_fields(tr, martinet.frame)
    C = transport_closure(X, tr, D)
    assert C.meta["closure_rank"] == 2
    assert C.constant_rank and C.rank[0] == 2


def test_heisenberg_closure_rank_3(heis, heis_line):
    X, tr = heis_line
    C = transport_closure(X, tr, FrameAlongCurve.from_fields(tr, heis.frame))
    assert C.meta["closure_rank"] == 3


def test_invariant_frame_unchanged(heis_line):
    X, tr = heis_line
    # span{Y, dz} is invariant along the flow of Y
    B = FrameAlongCurve.from_fields(tr, [X, vf("0", "0", "1")])
    C = transport_closure(X, tr, B)
    assert C.meta["closure_rank"] == 2
    for i in range(len(C.times)):
        P, Q = B.basis(i), C.basis(i)
        assert np.linalg.norm(P @ P.T - Q @ Q.T) <= 1e-8


def test_closure_subsampled_is_lower_bound(heis, heis_line):
    X, tr = heis_line
    C = transport_closure(X, tr, FrameAlongCurve.from_fields(tr, heis.frame), tau_samples=1)
    assert C.meta["lower_bound"] and C.meta["closure_rank"] == 2


def test_invariance_full_space(heis, heis_line):
    X, tr = heis_line
    B = FrameAlongCurve.from_fields(tr, [vf("1", "0", "0"), vf("0", "1", "0"), vf("0", "0", "1")])
    rep = invariance_check(X, tr, B)
    assert rep.flow_invariant and rep.bracket_invariant


def test_invariance_martinet(martinet_line):
    X, tr = martinet_line
    B = FrameAlongCurve.from_fields(tr, [vf("1", "0", "0"), vf("0", "1", "0")])
    rep = invariance_check(X, tr, B)
    assert rep.flow_invariant and rep.bracket_invariant


def test_invariance_heisenberg_fails(heis, heis_line):
    X, tr = heis_line
    rep = invariance_check(X, tr, FrameAlongCurve.from_fields(tr, heis.frame))
    assert not rep.flow_invariant and not rep.bracket_invariant


def test_invariance_sampled_frame(martinet, martinet_line):
    # sampled frame without analytic sections: spline path
    X, tr = martinet_line
    D = FrameAlongCurve.from_fields(tr, martinet.frame)
    B = FrameAlongCurve(tr, D.times, D.vectors)
    rep = invariance_check(X, tr, B)
    assert rep.flow_invariant and rep.bracket_invariant


def test_invariance_needs_constant_rank(heis_line):
    X, tr = heis_line
    B = FrameAlongCurve.from_fields(tr, [vf("x", "0", "0")])
    with pytest.raises(RankError):
        invariance_check(X, tr, B)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_flow_and_bracket_agree_random_linear(entries):
    # X = A x with A upper triangular; B = span{e1} is always invariant, span{e2} is not unless A[0,1] = 0
    a, b, c = entries
    X = vf(f"({a})*x + ({b})*y", f"({c})*y", "0")
    tr = integrate_flow(X, [0.3, 1.0, 0.0], 0, 1.0, mode=1)
    for W in ([vf("1", "0", "0")], [vf("0", "1", "0")], [vf("1", "0", "0"), vf("0", "1", "0")]):
        rep = invariance_check(X, tr, FrameAlongCurve.from_fields(tr, W))
        assert rep.flow_invariant == rep.bracket_invariant


def test_gram_schmidt_euclidean(flat2):
    tr = integrate_flow(flat2.frame[0], [0, 0], 0, 1)
    e1, e11 = vf("1", "0", coords=("x", "y")), vf("1", "1", coords=("x", "y"))
    out = gram_schmidt_along(FrameAlongCurve.from_fields(tr, [e1, e11]), np.eye(2))
    for i in range(len(out.times)):
        np.testing.assert_allclose(out.vectors[i], np.eye(2), atol=1e-12)


def test_gram_schmidt_heisenberg(heis, heis_line):
    X, tr = heis_line
    Y, Z = heis.frame
    B = FrameAlongCurve.from_fields(tr, [Y, Y + Z])
    F = np.array([heis.frame_matrix(x) for x in tr.states])
    # metric making Y, Z orthonormal: G = F^{-T} F^{-1} on D
    G = []
    for i, tk in enumerate(tr.t):
        M = heis.frame_matrix(tr(tk))
        Mfull = np.column_stack([M, np.cross(M[:, 0], M[:, 1])])
        Mi = np.linalg.inv(Mfull)
        G.append(Mi.T @ Mi)
    out = gram_schmidt_along(B, np.array(G))
    for i in range(len(out.times)):
        np.testing.assert_allclose(out.vectors[i], F[i], atol=1e-10)


def test_gram_schmidt_dependent_raises(flat2):
    tr = integrate_flow(flat2.frame[0], [0, 0], 0, 1)
    e1 = vf("1", "0", coords=("x", "y"))
    with pytest.raises(RankError):
        gram_schmidt_along(FrameAlongCurve.from_fields(tr, [e1, e1 + e1]), np.eye(2))


@given(st.integers(0, 10_000))
def test_gram_schmidt_orthonormal(seed):
    r = np.random.default_rng(seed)
    n, k = 4, 3
    A = r.normal(size=(n, n))
    M = A @ A.T + n * np.eye(n)
    c = ("a", "b", "c", "d")
    X = vf("1", "0", "0", "0", coords=c)
    tr = integrate_flow(X, [0, 0, 0, 0], 0, 1)
    W = r.normal(size=(n, k))
    fields = [vf(*[repr(float(v)) for v in W[:, j]], coords=c) for j in range(k)]
    out = gram_schmidt_along(FrameAlongCurve.from_fields(tr, fields), M)
    for i in range(len(out.times)):
        Q = out.vectors[i]
        np.testing.assert_allclose(Q.T @ M @ Q, np.eye(k), atol=1e-10)
        # same span as the input
        assert np.linalg.matrix_rank(np.hstack([Q, W]), tol=1e-8) == k


def test_frame_roundtrip(heis, heis_line):
    X, tr = heis_line
    D = FrameAlongCurve.from_fields(tr, heis.frame)
    back = FrameAlongCurve.from_dict(D.to_dict(), base=tr)
    np.testing.assert_allclose(back.vectors, D.vectors)
    np.testing.assert_array_equal(back.rank, D.rank)
