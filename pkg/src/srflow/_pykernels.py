"""Pure-Python kernels: tape evaluation and the Dormand-Prince 5(4) driver.

This module is the reference implementation and the fallback used when the
compiled extension is unavailable. The compiled kernel follows the same
algorithm step for step, so both produce the same grids up to rounding.
"""

from __future__ import annotations

import math

import numpy as np

from .dsl import tape as T

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_NONFINITE = 2
STATUS_STEPSIZE = 3
STATUS_MAXSTEPS = 4

MODE_FLOW = 0
MODE_TANGENT = 1
MODE_ADJOINT = 2

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
# dense output (Hairer's continuous extension)
D1 = -12715105075 / 11282082432
D3 = 87487479700 / 32700410799
D4 = -10690763975 / 1880347072
D5 = 701980252875 / 199316789632
D6 = -1453857185 / 822651844
D7 = 69997945 / 29380423

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0


# ---------------------------------------------------------------------------
# IEEE-style helpers: Python raises where C returns inf/nan

def _div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or a != a:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def _log(a):
    if a > 0.0:
        return math.log(a) if a != math.inf else math.inf
    if a == 0.0:
        return -math.inf
    return math.nan


def _sqrt(a):
    if a >= 0.0:
        return math.sqrt(a)
    return math.nan


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _sin(a):
    return math.sin(a) if math.isfinite(a) else math.nan


def _cos(a):
    return math.cos(a) if math.isfinite(a) else math.nan


def _powi(a, k):
    try:
        return a**k
    except ZeroDivisionError:
        return math.inf
    except OverflowError:
        return math.inf


def _powc(a, c):
    if a < 0.0 or a != a:
        return math.nan
    try:
        return a**c
    except ZeroDivisionError:
        return math.inf
    except OverflowError:
        return math.inf


_HELPERS = {
    "_div": _div,
    "_log": _log,
    "_sqrt": _sqrt,
    "_exp": _exp,
    "_sin": _sin,
    "_cos": _cos,
    "_atan": math.atan,
    "_powi": _powi,
    "_powc": _powc,
}


def codegen(tape):
    """Generate a Python function ``f(x, t) -> list`` from a tape."""
    n = tape.n_in
    lines = ["def _tape_fn(x, t):"]
    if n == 1:
        lines.append("    s0, = x")
    else:
        lines.append("    " + ", ".join(f"s{i}" for i in range(n)) + " = x")
    lines.append(f"    s{n} = t")
    ops, a, b, d, c = (arr.tolist() for arr in (tape.ops, tape.a, tape.b, tape.d, tape.c))
    for i, op in enumerate(ops):
        s = n + 1 + i
        x, y = f"s{a[i]}", f"s{b[i]}"
        if op == T.OP_CONST:
            rhs = repr(c[i])
        elif op == T.OP_ADD:
            rhs = f"{x} + {y}"
        elif op == T.OP_SUB:
            rhs = f"{x} - {y}"
        elif op == T.OP_MUL:
            rhs = f"{x} * {y}"
        elif op == T.OP_DIV:
            rhs = f"_div({x}, {y})"
        elif op == T.OP_NEG:
            rhs = f"-{x}"
        elif op == T.OP_SIN:
            rhs = f"_sin({x})"
        elif op == T.OP_COS:
            rhs = f"_cos({x})"
        elif op == T.OP_EXP:
            rhs = f"_exp({x})"
        elif op == T.OP_LOG:
            rhs = f"_log({x})"
        elif op == T.OP_SQRT:
            rhs = f"_sqrt({x})"
        elif op == T.OP_ATAN:
            rhs = f"_atan({x})"
        elif op == T.OP_POWI:
            rhs = f"_powi({x}, {int(c[i])})"
        elif op == T.OP_POWC:
            rhs = f"_powc({x}, {c[i]!r})"
        elif op in (T.OP_GE, T.OP_GT, T.OP_LE, T.OP_LT):
            sym = {T.OP_GE: ">=", T.OP_GT: ">", T.OP_LE: "<=", T.OP_LT: "<"}[op]
            rhs = f"{x} {sym} {c[i]!r}"
        elif op == T.OP_SELECT:
            rhs = f"{x} if s{d[i]} else {y}"
        else:  # pragma: no cover
            raise ValueError(f"bad opcode {op}")
        lines.append(f"    s{s} = {rhs}")
    outs = ", ".join(f"s{o}" for o in tape.outputs.tolist())
    lines.append(f"    return [{outs}]")
    namespace = dict(_HELPERS)
    exec(compile("\n".join(lines), "<srflow-tape>", "exec"), namespace)
    return namespace["_tape_fn"]


def eval_tape(tape, x, t):
    return np.array(tape.pyfunc()(np.asarray(x, float).tolist(), float(t)), dtype=float)


def eval_tape_many(tape, points, times):
    f = tape.pyfunc()
    out = np.empty((points.shape[0], tape.n_out))
    for k, (row, tk) in enumerate(zip(points.tolist(), times.tolist())):
        out[k] = f(row, tk)
    return out


# ---------------------------------------------------------------------------
# right-hand sides of the augmented systems

def make_rhs(tape, n, mode):
    f = tape.pyfunc()
    if mode == MODE_FLOW:

        def rhs(t, y):
            return np.array(f(y.tolist(), t))

        return rhs
    nn = n * n

    def rhs(t, y):
        out = f(y[:n].tolist(), t)
        X = np.array(out[:n])
        J = np.array(out[n:]).reshape(n, n)
        V = y[n : n + nn].reshape(n, n)
        parts = [X, (J @ V).ravel()]
        if mode == MODE_ADJOINT:
            parts.append(-(y[n + nn :] @ J))
        return np.concatenate(parts)

    return rhs


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / v.size)


def dopri5(tape, n, mode, y0, t0, t1, rtol, atol, max_step, bound, max_steps, h0=0.0):
    """Integrate the augmented system from ``t0`` to ``t1``.

    Returns
    -------
    status : int
    ts : ndarray (N+1,)
    ys : ndarray (N+1, m)
    dense : ndarray (N, 5, m)
        Continuous-extension coefficients per accepted step.
    """
    rhs = make_rhs(tape, n, mode)
    y = np.array(y0, dtype=float)
    m = y.size
    t = float(t0)
    span = float(t1) - t
    ts = [t]
    ys = [y.copy()]
    dense = []
    if span == 0.0:
        return STATUS_OK, np.array(ts), np.array(ys), np.empty((0, 5, m))
    direction = 1.0 if span > 0 else -1.0
    max_step = abs(span) if max_step <= 0 else min(max_step, abs(span))

    k1 = rhs(t, y)
    if not np.all(np.isfinite(k1)):
        return STATUS_NONFINITE, np.array(ts), np.array(ys), np.empty((0, 5, m))
    h = h0 if h0 > 0 else _initial_step(rhs, t, y, k1, direction, rtol, atol)
    h = min(h, max_step)
    steps = 0
    rejected_last = False
    while True:
        remaining = (t1 - t) * direction
        if remaining <= 0:
            break
        if steps >= max_steps:
            return STATUS_MAXSTEPS, np.array(ts), np.array(ys), _stack(dense, m)
        if h < 1e-14 * max(1.0, abs(t)):
            return STATUS_STEPSIZE, np.array(ts), np.array(ys), _stack(dense, m)
        last = h >= remaining
        if last:
            h = remaining
        hs = h * direction
        k2 = rhs(t + C2 * hs, y + hs * (A21 * k1))
        k3 = rhs(t + C3 * hs, y + hs * (A31 * k1 + A32 * k2))
        k4 = rhs(t + C4 * hs, y + hs * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = rhs(t + C5 * hs, y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = rhs(t + hs, y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        ynew = y + hs * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
        tnew = t1 if last else t + hs
        k7 = rhs(tnew, ynew)
        steps += 1
        if not (np.all(np.isfinite(k7)) and np.all(np.isfinite(ynew))):
            # shrink before giving up: a trial stage may have left the domain
            if h > 1e-10 * max(1.0, abs(span)):
                h *= 0.25
                rejected_last = True
                continue
            return STATUS_NONFINITE, np.array(ts), np.array(ys), _stack(dense, m)
        errvec = hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = _rms(errvec / sc)
        if err != err:
            err = math.inf
        if err <= 1.0:
            ydiff = ynew - y
            bspl = hs * k1 - ydiff
            r5 = hs * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)
            dense.append(np.stack([y, ydiff, bspl, ydiff - hs * k7 - bspl, r5]))
            t, y, k1 = tnew, ynew, k7
            ts.append(t)
            ys.append(y.copy())
            if not (np.linalg.norm(y[:n]) <= bound):
                return STATUS_BLOWUP, np.array(ts), np.array(ys), _stack(dense, m)
            fac = FAC_MAX if err == 0.0 else SAFETY * err**-0.2
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            rejected_last = False
            h = min(h * fac, max_step)
        else:
            fac = max(FAC_MIN, SAFETY * err**-0.2) if math.isfinite(err) else FAC_MIN
            h *= fac
            rejected_last = True
    return STATUS_OK, np.array(ts), np.array(ys), _stack(dense, m)


def _stack(dense, m):
    return np.array(dense) if dense else np.empty((0, 5, m))


def _initial_step(rhs, t, y, f0, direction, rtol, atol):
    sc = atol + rtol * np.abs(y)
    d0 = _rms(y / sc)
    d1 = _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = rhs(t + direction * h0, y + direction * h0 * f0)
    d2 = _rms((f1 - f0) / sc) / h0 if np.all(np.isfinite(f1)) else math.inf
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)
