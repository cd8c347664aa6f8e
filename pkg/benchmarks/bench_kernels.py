"""Compare the compiled and pure-Python integration kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Times the DOPRI5 kernel in flow, tangent and adjoint modes on a few
corpus-like fields and reports the speedup of the compiled kernel. The
endpoints of both kernels are compared (relative difference) as a
sanity check; on the chaotic field the adjoint mode amplifies rounding.
"""

import argparse
import time

import numpy as np

from srflow import _backend
from srflow.dsl import VectorFieldExpr

XYZ = ("x", "y", "z")

FIELDS = {
    "heisenberg-circle": (["cos(t)", "sin(t)", "x*sin(t) - y*cos(t)"], XYZ, [0.0, 0.0, 0.0], 2 * np.pi),
    "martinet": (["0.3*cos(2*t)", "1", "x^2"], XYZ, [0.5, 0.0, 0.0], 5.0),
    "lorenz-like": (["10*(y - x)", "x*(28 - z) - y", "x*y - 8/3*z"], XYZ, [1.0, 1.0, 1.0], 2.0),
}


def _args(comps, coords, y0, T, mode):
    X = VectorFieldExpr.parse(comps, coords)
    n = len(coords)
    tape = X.tape(with_jacobian=mode > 0)
    y = list(y0)
    if mode >= 1:
        y += list(np.eye(n).ravel())
    if mode == 2:
        y += [1.0] * n
    return (tape, n, mode, np.array(y, float), 0.0, T, 1e-10, 1e-10, np.inf, 1e9, 10 ** 6)


def _time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        cc = _backend.kernels("compiled")
    except ImportError:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    py = _backend.kernels("python")
    print(f"{'field':<20} {'mode':<8} {'steps':>6} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'rel dy':>9}")
    for name, (comps, coords, y0, T) in FIELDS.items():
        for mode, label in ((0, "flow"), (1, "tangent"), (2, "adjoint")):
            a = _args(comps, coords, y0, T, mode)
            tp, rp = _time(py.dopri5, a, args.repeat)
            tc, rc = _time(cc.dopri5, a, args.repeat)
            diff = float(np.max(np.abs(rp[2][-1] - rc[2][-1])) / max(1.0, np.max(np.abs(rc[2][-1]))))
            print(f"{name:<20} {label:<8} {len(rc[1]):>6d} {tp:>11.4f} {tc:>13.5f} {tp / tc:>8.1f} {diff:>9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
