"""Select the numeric kernel implementation at import time.

The compiled extension ``srflow._ckernels`` is used when it imports; the
pure-Python twin in ``srflow._pykernels`` is the fallback. Setting the
environment variable ``SRFLOW_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import _pykernels
from .dsl.nodes import TIME, evaluate
from .errors import DomainError

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("SRFLOW_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def kernels(name=None):
    """Return the kernel module: ``"compiled"``, ``"python"`` or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def eval_tape(tape, x, t):
    return _impl.eval_tape(tape, np.asarray(x, dtype=float), float(t))


def eval_tape_many(tape, points, times):
    return _impl.eval_tape_many(tape, np.ascontiguousarray(points, float), np.ascontiguousarray(times, float))


def dopri5(*args, **kwargs):
    return _impl.dopri5(*args, **kwargs)


def explain_nonfinite(tape, x, t):
    """Re-evaluate lazily to find which expression left its domain.

    Raises DomainError naming the node; returns only if every output turns
    out finite under lazy evaluation (possible when the tape evaluated an
    unselected piecewise branch).
    """
    env = dict(zip(tape.coords, np.asarray(x, float).tolist()))
    env[TIME] = float(t)
    values = []
    for e in tape.exprs:
        v = evaluate(e, env)
        if not math.isfinite(v):
            raise DomainError("non-finite value", e)
        values.append(v)
    return np.array(values)


def eval_checked(tape, x, t):
    out = eval_tape(tape, x, t)
    if not np.all(np.isfinite(out)):
        out = explain_nonfinite(tape, x, t)
    return out


def eval_many_checked(tape, points, times):
    out = eval_tape_many(tape, points, times)
    bad = ~np.all(np.isfinite(out), axis=1)
    for k in np.flatnonzero(bad):
        out[k] = explain_nonfinite(tape, points[k], times[k])
    return out
