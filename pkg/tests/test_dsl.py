import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srflow.dsl import (
    Binary,
    Const,
    Piecewise,
    Var,
    VectorFieldExpr,
    compile_tape,
    differentiate,
    eval_vf,
    evaluate,
    parse_scalar,
    substitute,
    to_source,
)
from srflow.errors import DomainError, ParseError, UnknownIdentifierError
from srflow._backend import eval_tape

XY = ("x", "y")


def test_parse_structure():
    e = parse_scalar("x + 2*y", XY)
    assert isinstance(e, Binary) and e.op == "add"
    assert e.left is Var("x")
    assert e.right.op == "mul" and e.right.left is Const(2.0) and e.right.right is Var("y")


def test_pythagorean_identity():
    e = parse_scalar("sin(q1)^2 + cos(q1)^2", ["q1"])
    assert abs(evaluate(e, {"q1": 0.7}) - 1.0) <= 1e-15


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse_scalar("x*y1 + h1(x)", ["x", "y1"])
    assert info.value.name == "h1"
    assert info.value.offset == 7


@pytest.mark.parametrize("src", ["x +", "(x", "x ** ** 2", "sin()", "x^y", "piecewise(x >, 1, 0)", "3 $ x"])
def test_parse_errors_have_offsets(src):
    with pytest.raises(ParseError) as info:
        parse_scalar(src, XY)
    assert info.value.offset is not None


def test_hash_consing_identity():
    assert parse_scalar("x*y + 1", XY) is parse_scalar("x*y+1", XY)
    assert parse_scalar("x", XY) is not parse_scalar("y", XY)


def test_derivative_examples():
    dx = differentiate(parse_scalar("x*x", XY), "x")
    assert dx is parse_scalar("2*x", XY)
    assert differentiate(parse_scalar("y", XY), "x") is Const(0.0)
    e = parse_scalar("x*y1*y1 + exp(x)", ["x", "y1"])
    h = 1e-6
    fd = (evaluate(e, {"x": h, "y1": 2.0}) - evaluate(e, {"x": -h, "y1": 2.0})) / (2 * h)
    exact = evaluate(differentiate(e, "x"), {"x": 0.0, "y1": 2.0})
    assert exact == pytest.approx(5.0, abs=1e-12)
    assert abs(fd - exact) <= 1e-6


def test_eval_vf_examples():
    Y = VectorFieldExpr.parse(["1", "0", "-y"], ["x", "y", "z"])
    np.testing.assert_array_equal(eval_vf(Y, [0, 3, 0], 0.0), [1, 0, -3])
    np.testing.assert_array_equal(eval_vf(VectorFieldExpr.zero(XY), [4.0, -1.0], 0.3), [0, 0])
    V = VectorFieldExpr.parse(["t*x", "1"], XY)
    np.testing.assert_allclose(eval_vf(V, [2, 0], 0.5), [1.0, 1.0])


def test_domain_error_names_node():
    e = parse_scalar("ln(x) + 1", XY)
    with pytest.raises(DomainError) as info:
        evaluate(e, {"x": -1.0, "y": 0.0})
    assert "ln(x)" in str(info.value)
    with pytest.raises(DomainError):
        evaluate(parse_scalar("1/x", XY), {"x": 0.0, "y": 0.0})


def test_piecewise_comparators():
    for cmp, below, at in ((">=", 0.0, 1.0), (">", 0.0, 0.0), ("<=", 1.0, 1.0), ("<", 1.0, 0.0)):
        e = parse_scalar(f"piecewise(x {cmp} 0, 1, 0)", XY)
        assert isinstance(e, Piecewise)
        assert evaluate(e, {"x": -1.0, "y": 0}) == below
        assert evaluate(e, {"x": 0.0, "y": 0}) == at


def test_piecewise_derivative_is_branchwise():
    e = parse_scalar("piecewise(x > 0, exp(-1/x), 0)", XY)
    d = differentiate(e, "x")
    assert evaluate(d, {"x": -0.5, "y": 0}) == 0.0
    assert evaluate(d, {"x": 0.5, "y": 0}) == pytest.approx(math.exp(-2) * 4)


def test_pickle_roundtrip():
    e = parse_scalar("atan(x)/sqrt(1 + y^2) - x^(3/2)", XY)
    assert pickle.loads(pickle.dumps(e)) is e


def test_substitute():
    e = parse_scalar("x*y + y", XY)
    s = substitute(e, {"y": parse_scalar("2*x", XY)})
    assert evaluate(s, {"x": 3.0}) == pytest.approx(24.0)


# --- properties -----------------------------------------------------------

_atoms = st.sampled_from(["x", "y", "2", "0.5", "t"])


@st.composite
def exprs(draw, depth=3):
    if depth == 0:
        return draw(_atoms)
    kind = draw(st.sampled_from(["atom", "bin", "fn", "pow"]))
    if kind == "atom":
        return draw(_atoms)
    if kind == "bin":
        op = draw(st.sampled_from(["+", "-", "*"]))
        return f"({draw(exprs(depth - 1))} {op} {draw(exprs(depth - 1))})"
    if kind == "fn":
        fn = draw(st.sampled_from(["sin", "cos", "atan", "exp"]))
        return f"{fn}({draw(exprs(depth - 1))}/4)"
    return f"({draw(exprs(depth - 1))})^{draw(st.sampled_from(['2', '3']))}"


pts = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1, 1))


@given(exprs(), pts)
def test_print_parse_roundtrip(src, p):
    e = parse_scalar(src, XY)
    assert parse_scalar(to_source(e), XY) is e


@given(exprs(), pts)
def test_tape_matches_tree(src, p):
    e = parse_scalar(src, XY)
    env = {"x": p[0], "y": p[1], "t": p[2]}
    tape = compile_tape([e], XY)
    got = eval_tape(tape, np.array(p[:2]), p[2])[0]
    want = evaluate(e, env)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@given(exprs(), pts)
def test_derivative_matches_finite_difference(src, p):
    e = parse_scalar(src, XY)
    env = {"x": p[0], "y": p[1], "t": p[2]}
    d = evaluate(differentiate(e, "x"), env)
    h = 1e-6
    fd = (evaluate(e, dict(env, x=p[0] + h)) - evaluate(e, dict(env, x=p[0] - h))) / (2 * h)
    assert abs(d - fd) <= 1e-5 * max(1.0, abs(d))


@given(exprs(), exprs())
def test_linearity_of_derivative(a, b):
    ea, eb = parse_scalar(a, XY), parse_scalar(b, XY)
    env = {"x": 0.3, "y": -0.7, "t": 0.2}
    lhs = evaluate(differentiate(ea + eb, "y"), env)
    rhs = evaluate(differentiate(ea, "y"), env) + evaluate(differentiate(eb, "y"), env)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
