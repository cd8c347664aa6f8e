import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import srflow
from srflow import _backend
from srflow.dsl import VectorFieldExpr

XYZ = ("x", "y", "z")

compiled_only = pytest.mark.skipif(srflow.BACKEND != "compiled", reason="extension not built")


def _field():
    return VectorFieldExpr.parse(["cos(t) + 0.1*z", "sin(t)", "x*sin(t) - y*cos(t) + piecewise(x > 0.2, x^2, 0)"], XYZ)


@compiled_only
@pytest.mark.parametrize("mode", [0, 1, 2])
def test_kernels_agree(mode):
    X = _field()
    tape = X.tape(with_jacobian=mode > 0)
    y0 = [0.1, -0.2, 0.3]
    if mode == 1:
        y0 += list(np.eye(3).ravel())
    if mode == 2:
        y0 += list(np.eye(3).ravel()) + [1.0, 0.5, -2.0]
    args = (tape, 3, mode, np.array(y0), 0.0, 3.0, 1e-10, 1e-10, np.inf, 1e9, 10 ** 6)
    py = _backend.kernels("python").dopri5(*args)
    cc = _backend.kernels("compiled").dopri5(*args)
    assert py[0] == cc[0] == 0
    # rounding differences may shift individual steps near the kink, so the
    # comparison is at the integration tolerance, not bitwise
    assert abs(len(py[1]) - len(cc[1])) <= 0.1 * len(py[1])
    assert py[1][-1] == cc[1][-1] == 3.0
    np.testing.assert_allclose(py[2][-1], cc[2][-1], rtol=1e-8, atol=1e-8)


@compiled_only
def test_kernels_identical_on_smooth_field():
    X = VectorFieldExpr.parse(["cos(t)", "sin(t)", "x*sin(t) - y*cos(t)"], XYZ)
    args = (X.tape(), 3, 0, np.array([0.1, -0.2, 0.3]), 0.0, 3.0, 1e-10, 1e-10, np.inf, 1e9, 10 ** 6)
    py = _backend.kernels("python").dopri5(*args)
    cc = _backend.kernels("compiled").dopri5(*args)
    np.testing.assert_allclose(py[1], cc[1], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(py[2], cc[2], rtol=1e-12, atol=1e-12)


@compiled_only
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(-5, 5))
def test_tape_eval_agree(x, t):
    tape = _field().tape(with_jacobian=True)
    a = _backend.kernels("python").eval_tape(tape, np.array(x), t)
    b = _backend.kernels("compiled").eval_tape(tape, np.array(x), t)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


def test_pure_python_fallback_selected():
    code = (
        "import srflow, srflow.systems as s;"
        "d = s.load_system('martinet');"
        "v = s.classify_candidate(d, d.candidate('abnormal-line'))[0];"
        "print(srflow.BACKEND, v.kind)"
    )
    env = dict(os.environ, SRFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "ABNORMAL_CERTIFIED"]
