"""Time-dependent vector fields, their flows, tangent maps and covector transport.

A flow is integrated as one augmented system so that the state, the
variational matrix ``V`` (``dV/dt = J V``) and the adjoint covector
(``dlam/dt = -lam J``) share a single adaptive grid. Integration restarts at
every control breakpoint, so breakpoints are grid points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._pykernels import (
    MODE_ADJOINT,
    MODE_FLOW,
    MODE_TANGENT,
    STATUS_BLOWUP,
    STATUS_MAXSTEPS,
    STATUS_NONFINITE,
    STATUS_OK,
    STATUS_STEPSIZE,
)
from .dsl import ZERO, Expr, VectorFieldExpr, as_expr, evaluate, parse_scalar
from .errors import (
    BlowUpError,
    DimensionError,
    IntegrationError,
    NonFiniteError,
    StepSizeError,
)

__all__ = [
    "DEFAULT_TOL",
    "DEFAULT_BOUND",
    "PiecewiseControl",
    "TDVF",
    "DenseOutput",
    "Trajectory",
    "TangentTransport",
    "CovectorTransport",
    "integrate_flow",
    "integrate_tangent",
    "integrate_adjoint",
    "flow_map",
    "integral_curve_residual",
]

DEFAULT_TOL = 1e-10
DEFAULT_BOUND = 1e9
DEFAULT_MAX_STEPS = 1_000_000


# ---------------------------------------------------------------------------
# controls and time-dependent fields

class PiecewiseControl:
    """Control signal ``u(t)`` given by expressions in ``t`` between breakpoints.

    Parameters
    ----------
    pieces : sequence of sequences of Expr or str
        ``pieces[k]`` holds the ``d`` component expressions used on the
        ``k``-th interval.
    breaks : sequence of float
        Strictly increasing interior breakpoints; ``len(breaks) ==
        len(pieces) - 1``. Piece ``k`` covers ``[breaks[k-1], breaks[k]]``.
    """

    def __init__(self, pieces, breaks=(), params=None):
        pieces = [
            tuple(
                parse_scalar(p, [], params) if isinstance(p, str) else as_expr(p)
                for p in piece
            )
            for piece in pieces
        ]
        breaks = tuple(float(b) for b in breaks)
        if not pieces:
            raise ValueError("a control needs at least one piece")
        if len(breaks) != len(pieces) - 1:
            raise ValueError(f"{len(pieces)} pieces need {len(pieces) - 1} breakpoints, got {len(breaks)}")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        d = len(pieces[0])
        if any(len(p) != d for p in pieces):
            raise DimensionError("all control pieces need the same number of components")
        for piece in pieces:
            for e in piece:
                extra = e.free_symbols - {"t"}
                if extra:
                    raise ValueError(f"control expressions may only use t, found {sorted(extra)}")
        self.pieces = tuple(pieces)
        self.breaks = breaks

    @classmethod
    def constant(cls, values):
        return cls([[float(v) for v in values]])

    @property
    def d(self):
        return len(self.pieces[0])

    def piece_index(self, t, side=1):
        """Index of the piece used at ``t``; at a breakpoint ``side`` picks it."""
        if side >= 0:
            return int(np.searchsorted(self.breaks, t, side="right"))
        return int(np.searchsorted(self.breaks, t, side="left"))

    def value(self, t, side=1):
        piece = self.pieces[self.piece_index(t, side)]
        env = {"t": float(t)}
        return np.array([evaluate(e, env) for e in piece])

    def __call__(self, t, side=1):
        return self.value(t, side)

    def derivative(self, t, side=1):
        from .dsl import differentiate

        piece = self.pieces[self.piece_index(t, side)]
        env = {"t": float(t)}
        return np.array([evaluate(differentiate(e, "t"), env) for e in piece])

    def __repr__(self):
        return f"PiecewiseControl(pieces={len(self.pieces)}, breaks={self.breaks})"


class TDVF:
    """Time-dependent vector field, smooth in ``x``, piecewise smooth in ``t``.

    Between consecutive breakpoints the field is a single VectorFieldExpr
    (which may mention ``t``). Build instances with :meth:`autonomous`,
    :meth:`from_field` or :meth:`from_control`.
    """

    def __init__(self, pieces, breaks=(), *, frame=None, control=None, drift=None):
        pieces = tuple(pieces)
        breaks = tuple(float(b) for b in breaks)
        if len(breaks) != len(pieces) - 1:
            raise ValueError("len(breaks) must equal len(pieces) - 1")
        coords = pieces[0].coords
        if any(p.coords != coords for p in pieces):
            raise DimensionError("all pieces must share coordinates")
        self.pieces = pieces
        self.breaks = breaks
        self.coords = coords
        self.frame = None if frame is None else tuple(frame)
        self.control = control
        self.drift = drift

    @classmethod
    def from_field(cls, field: VectorFieldExpr):
        """Autonomous or time-explicit field (one smooth piece)."""
        return cls([field])

    autonomous = from_field

    @classmethod
    def from_control(cls, frame, control: PiecewiseControl, drift=None):
        """``X_t = drift + sum_i u_i(t) f_i`` for a piecewise control."""
        frame = tuple(frame)
        if control.d != len(frame):
            raise DimensionError(f"control has {control.d} components for {len(frame)} frame fields")
        coords = frame[0].coords
        pieces = []
        for piece in control.pieces:
            comps = [ZERO] * len(coords)
            for u, f in zip(piece, frame):
                comps = [c + u * fc for c, fc in zip(comps, f.components)]
            field = VectorFieldExpr(comps, coords)
            if drift is not None:
                field = field + drift
            pieces.append(field)
        return cls(pieces, control.breaks, frame=frame, control=control, drift=drift)

    @property
    def dim(self):
        return len(self.coords)

    def piece_index(self, t, side=1):
        if side >= 0:
            return int(np.searchsorted(self.breaks, t, side="right"))
        return int(np.searchsorted(self.breaks, t, side="left"))

    def field_at(self, t, side=1) -> VectorFieldExpr:
        return self.pieces[self.piece_index(t, side)]

    def breakpoints_between(self, a, b):
        lo, hi = min(a, b), max(a, b)
        return [bk for bk in self.breaks if lo < bk < hi]

    def __call__(self, x, t, side=1):
        return self.field_at(t, side)(x, t)

    def jacobian(self, x, t, side=1):
        return self.field_at(t, side).jacobian_at(x, t)

    def __repr__(self):
        return f"TDVF(dim={self.dim}, pieces={len(self.pieces)})"


# ---------------------------------------------------------------------------
# dense output

class DenseOutput:
    """Piecewise quartic continuous extension of a Dormand-Prince run.

    Segment ``i`` covers ``[knots[i], knots[i+1]]``; it was integrated from
    ``told[i]`` with signed step ``h[i]``, so backward runs are handled by
    the same formula.
    """

    def __init__(self, knots, told, h, coef):
        self.knots = np.asarray(knots, float)
        self.told = np.asarray(told, float)
        self.h = np.asarray(h, float)
        self.coef = np.asarray(coef, float)

    @property
    def width(self):
        return self.coef.shape[2]

    def _segment(self, t, side):
        t = np.asarray(t, float)
        lo, hi = self.knots[0], self.knots[-1]
        span = hi - lo
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise ValueError(f"time outside the integrated range [{lo}, {hi}]")
        how = "left" if side < 0 else "right"
        idx = np.searchsorted(self.knots, t, side=how) - 1
        return np.clip(idx, 0, max(len(self.knots) - 2, 0)), span

    def __call__(self, t, side=1):
        """State at time(s) ``t``; ``side=-1`` uses left segments at knots."""
        scalar = np.ndim(t) == 0
        idx, _ = self._segment(t, side)
        th = ((np.asarray(t, float) - self.told[idx]) / self.h[idx])[..., None]
        r = self.coef[idx]
        r1, r2, r3, r4, r5 = (r[..., k, :] for k in range(5))
        out = r1 + th * (r2 + (1 - th) * (r3 + th * (r4 + (1 - th) * r5)))
        return out if not scalar else out.reshape(-1)

    def derivative(self, t, side=1):
        """Time derivative of the interpolant."""
        scalar = np.ndim(t) == 0
        idx, _ = self._segment(t, side)
        h = self.h[idx][..., None]
        th = ((np.asarray(t, float) - self.told[idx]) / self.h[idx])[..., None]
        r = self.coef[idx]
        r1, r2, r3, r4, r5 = (r[..., k, :] for k in range(5))
        c = r4 + (1 - th) * r5
        b = r3 + th * c
        db = c - th * r5
        a = r2 + (1 - th) * b
        da = -b + (1 - th) * db
        out = (a + th * da) / h
        return out if not scalar else out.reshape(-1)


# ---------------------------------------------------------------------------
# integration results

class Trajectory:
    """Integrated curve ``x(t)`` with grid samples and dense output.

    Attributes
    ----------
    t : ndarray (N,)
        Strictly increasing grid; contains every control breakpoint in range.
    states : ndarray (N, n)
    controls : ndarray (N, d) or None
        Control samples (right-continuous; the last sample is left-sided).
    t_start : float
        Initial time of the integration (``t[0]`` or ``t[-1]``).
    field : TDVF
    """

    def __init__(self, field, t, aug, dense, t_start, mode, tol, breakpoints, n_steps=None):
        self.field = field
        self.t = np.asarray(t, float)
        self._aug = np.asarray(aug, float)
        self.dense = dense
        self.t_start = float(t_start)
        self.mode = mode
        self.tol = tol
        self.breakpoints = tuple(breakpoints)
        self.coords = field.coords
        self.n_steps = n_steps if n_steps is not None else len(self.t) - 1
        n = self.dim
        self.states = self._aug[:, :n]
        self.controls = None
        if field.control is not None:
            self.controls = self._control_samples(self.t)

    def _control_samples(self, times):
        ctrl = self.field.control
        rows = []
        for k, tk in enumerate(times):
            side = -1 if k == len(times) - 1 else 1
            rows.append(ctrl.value(tk, side))
        return np.array(rows)

    @property
    def dim(self):
        return len(self.coords)

    @property
    def t0(self):
        return float(self.t[0])

    @property
    def t1(self):
        return float(self.t[-1])

    @property
    def x_start(self):
        return self._aug[0 if self.t_start == self.t[0] else -1, : self.dim].copy()

    def __len__(self):
        return len(self.t)

    def __call__(self, t, side=1):
        return self.dense(t, side)[..., : self.dim]

    def augmented(self, t, side=1):
        return self.dense(t, side)

    def velocity(self, t, side=1):
        """``X_t(x(t))`` evaluated from the field (exact right-hand side)."""
        return self.field(self(t, side), t, side)

    def is_breakpoint(self, t):
        return any(abs(t - b) <= 1e-12 * max(1.0, abs(b)) for b in self.breakpoints)

    def with_grid(self, times):
        """Same curve sampled on ``times`` (breakpoints are added)."""
        times = np.union1d(np.asarray(times, float), [b for b in self.breakpoints if self.t0 <= b <= self.t1])
        times = times[(times >= self.t0) & (times <= self.t1)]
        aug = self.dense(times)
        # keep stored grid values exactly where they coincide
        idx = np.searchsorted(self.t, times)
        hit = (idx < len(self.t)) & (self.t[np.minimum(idx, len(self.t) - 1)] == times)
        aug[hit] = self._aug[idx[hit]]
        return Trajectory(self.field, times, aug, self.dense, self.t_start, self.mode, self.tol,
                          self.breakpoints, self.n_steps)

    def resample(self, n):
        """Uniform grid of ``n`` points plus the breakpoints."""
        return self.with_grid(np.linspace(self.t0, self.t1, int(n)))

    def refined_times(self, factor=3):
        """Grid times plus ``factor - 1`` interior points per grid cell."""
        fr = np.arange(1, factor) / factor
        inner = (self.t[:-1, None] + fr[None, :] * np.diff(self.t)[:, None]).ravel()
        return np.union1d(self.t, inner)

    # exports
    def to_dict(self):
        out = {
            "coords": list(self.coords),
            "t": self.t.tolist(),
            "states": self.states.tolist(),
            "t_start": self.t_start,
            "breakpoints": list(self.breakpoints),
            "tol": self.tol,
        }
        if self.controls is not None:
            out["controls"] = self.controls.tolist()
        return out

    def to_csv(self, path):
        cols = ["t"] + [f"x_{i + 1}" for i in range(self.dim)]
        data = [self.t[:, None], self.states]
        if self.controls is not None:
            cols += [f"u_{i + 1}" for i in range(self.controls.shape[1])]
            data.append(self.controls)
        np.savetxt(path, np.hstack(data), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

    def __repr__(self):
        return f"Trajectory(dim={self.dim}, t=[{self.t0:g}, {self.t1:g}], N={len(self.t)})"


def _inv(V):
    return np.linalg.inv(V)


@dataclass
class TangentTransport:
    """Tangent maps ``V(t) = dx(t)/dx(t_start)`` along a trajectory."""

    base: Trajectory
    matrices: np.ndarray  # (N, n, n)

    def at(self, t, side=1):
        n = self.base.dim
        aug = self.base.augmented(t, side)
        return aug[..., n : n + n * n].reshape(aug.shape[:-1] + (n, n))

    def between(self, t, tau):
        """``V(t) V(tau)^{-1}``: tangent map of the flow from ``tau`` to ``t``."""
        return self.at(t) @ _inv(self.at(tau))

    def determinants(self):
        return np.linalg.det(self.matrices)


@dataclass
class CovectorTransport:
    """Adjoint covectors ``lam(t)`` with ``<lam(t), V(t) v>`` constant."""

    base: Trajectory
    covectors: np.ndarray  # (N, n)
    tangent: TangentTransport

    def at(self, t, side=1):
        n = self.base.dim
        return self.base.augmented(t, side)[..., n + n * n :]

    def pairing_defect(self, vectors):
        """Max over grid and ``vectors`` of ``|<lam(t), V(t) v> - <lam0, v>|``."""
        vectors = np.atleast_2d(vectors)
        k0 = 0 if self.base.t_start == self.base.t[0] else -1
        ref = vectors @ self.covectors[k0]
        vals = np.einsum("ki,kij,vj->kv", self.covectors, self.tangent.matrices, vectors)
        return float(np.max(np.abs(vals - ref[None, :])))


# ---------------------------------------------------------------------------
# drivers

def _raise_status(status, ts, ys, field, n, t_end):
    t_fail = float(ts[-1])
    if status == STATUS_BLOWUP:
        raise BlowUpError(f"state norm exceeded the blow-up bound at t={t_fail:.6g}")
    if status == STATUS_NONFINITE:
        tape = field.field_at(t_fail).tape()
        y = ys[-1][:n]
        f = _backend.explain_nonfinite(tape, y, t_fail)
        # the failing stage lies a short step ahead of the last accepted state
        sgn = 1.0 if t_end >= t_fail else -1.0
        for h in 10.0 ** np.arange(-14, 0):
            _backend.explain_nonfinite(tape, y + sgn * h * f, t_fail + sgn * h)
        raise NonFiniteError(f"non-finite derivative near t={t_fail:.6g}")
    if status == STATUS_STEPSIZE:
        raise StepSizeError(f"step size underflow at t={t_fail:.6g} (target {t_end:.6g})")
    if status == STATUS_MAXSTEPS:
        raise IntegrationError(f"maximum number of steps reached at t={t_fail:.6g}")
    raise IntegrationError(f"integrator status {status}")


def _run(field: TDVF, y0, t0, t1, mode, tol, max_step, bound, max_steps):
    n = field.dim
    y = np.asarray(y0, float)
    inner = sorted(field.breakpoints_between(t0, t1), reverse=t1 < t0)
    stops = [t0] + inner + [t1]
    all_t, all_y, all_dense, all_told, all_h = [np.array([t0])], [y[None, :]], [], [], []
    for a, b in zip(stops, stops[1:]):
        side = 1 if b > a else -1
        piece = field.field_at(0.5 * (a + b), side)
        tape = piece.tape(mode != MODE_FLOW)
        status, ts, ys, dense = _backend.dopri5(
            tape, n, mode, y, float(a), float(b), tol, tol, max_step or 0.0, bound, max_steps
        )
        if status != STATUS_OK:
            _raise_status(status, ts, ys, field, n, b)
        y = ys[-1].copy()
        all_t.append(ts[1:])
        all_y.append(ys[1:])
        all_dense.append(dense)
        all_told.append(ts[:-1])
        all_h.append(np.diff(ts))
    ts = np.concatenate(all_t)
    ys = np.concatenate(all_y)
    dense = np.concatenate(all_dense) if all_dense else np.empty((0, 5, y.size))
    told = np.concatenate(all_told) if all_told else np.empty(0)
    h = np.concatenate(all_h) if all_h else np.empty(0)
    if t1 < t0:
        ts, ys, dense, told, h = ts[::-1], ys[::-1], dense[::-1], told[::-1], h[::-1]
    if len(ts) == 1:
        # degenerate interval: a constant segment keeps the interpolant usable
        ts = np.array([t0, t0])
        ys = np.vstack([ys, ys])
        dense = np.zeros((1, 5, y.size))
        dense[0, 0] = ys[0]
        told, h = np.array([t0]), np.array([1.0])
    dense_out = DenseOutput(ts, told, h, dense)
    bps = [b for b in field.breaks if min(t0, t1) <= b <= max(t0, t1)]
    return Trajectory(field, ts, ys, dense_out, t0, mode, tol, bps, n_steps=len(told))


def _as_tdvf(X):
    if isinstance(X, TDVF):
        return X
    if isinstance(X, VectorFieldExpr):
        return TDVF.from_field(X)
    raise TypeError(f"expected TDVF or VectorFieldExpr, got {type(X).__name__}")


def integrate_flow(X, x0, t0, t1, tol=DEFAULT_TOL, *, max_step=None, bound=DEFAULT_BOUND,
                   max_steps=DEFAULT_MAX_STEPS, mode=MODE_FLOW, lam0=None) -> Trajectory:
    """Integrate ``dx/dt = X_t(x)`` from ``(t0, x0)`` to ``t1``.

    Parameters
    ----------
    X : TDVF or VectorFieldExpr
    x0 : array_like (n,)
    t0, t1 : float
        ``t1 < t0`` integrates backward.
    tol : float
        Relative and absolute local error tolerance per step.
    max_step : float, optional
        Upper bound on the step size.
    bound : float
        Blow-up bound on the state norm.

    Returns
    -------
    Trajectory

    Raises
    ------
    BlowUpError, NonFiniteError, DomainError, StepSizeError
    """
    X = _as_tdvf(X)
    n = X.dim
    x0 = np.asarray(x0, float).reshape(-1)
    if x0.size != n:
        raise DimensionError(f"x0 has {x0.size} entries, field has dim {n}")
    parts = [x0]
    if mode >= MODE_TANGENT:
        parts.append(np.eye(n).ravel())
    if mode == MODE_ADJOINT:
        lam0 = np.zeros(n) if lam0 is None else np.asarray(lam0, float).reshape(-1)
        if lam0.size != n:
            raise DimensionError(f"covector has {lam0.size} entries, expected {n}")
        parts.append(lam0)
    return _run(X, np.concatenate(parts), float(t0), float(t1), mode, tol, max_step, bound, max_steps)


def _rerun(X, traj, mode, lam0=None):
    if X is None:
        X = traj.field
    X = _as_tdvf(X)
    return integrate_flow(
        X, traj.x_start, traj.t_start, traj.t1 if traj.t_start == traj.t0 else traj.t0,
        tol=traj.tol, mode=mode, lam0=lam0,
    )


def integrate_tangent(X, traj: Trajectory) -> TangentTransport:
    """Solve the variational equation ``dV/dt = J V``, ``V(t_start) = I``.

    The flow is re-integrated jointly with ``V`` so both share one grid; the
    returned transport's ``base`` is that joint trajectory.
    """
    if traj.mode >= MODE_TANGENT and (X is None or X is traj.field):
        joint = traj
    else:
        joint = _rerun(X, traj, MODE_TANGENT)
    n = joint.dim
    mats = joint._aug[:, n : n + n * n].reshape(-1, n, n)
    return TangentTransport(joint, mats)


def integrate_adjoint(X, traj: Trajectory, lam0) -> CovectorTransport:
    """Solve ``dlam/dt = -lam J`` with ``lam(t_start) = lam0``."""
    joint = _rerun(X, traj, MODE_ADJOINT, lam0=lam0)
    n = joint.dim
    mats = joint._aug[:, n : n + n * n].reshape(-1, n, n)
    return CovectorTransport(joint, joint._aug[:, n + n * n :].copy(), TangentTransport(joint, mats))


def flow_map(X, t_from, t_to, x, tol=DEFAULT_TOL, **kwargs):
    """Evaluate the time-dependent flow ``A_{t_to, t_from}(x)``."""
    if t_from == t_to:
        return np.asarray(x, float).copy()
    traj = integrate_flow(X, x, t_from, t_to, tol, **kwargs)
    k = -1 if t_to > t_from else 0
    return traj.states[k].copy()


def integral_curve_residual(traj: Trajectory, X=None, times=None):
    """Max relative mismatch between ``dx/dt`` of the interpolant and ``X``."""
    X = traj.field if X is None else _as_tdvf(X)
    if times is None:
        mids = 0.5 * (traj.t[:-1] + traj.t[1:])
        times = mids
    worst = 0.0
    for tk in np.atleast_1d(times):
        v = traj.dense.derivative(tk)[: traj.dim]
        f = X(traj(tk), tk)
        worst = max(worst, float(np.linalg.norm(v - f) / (1.0 + np.linalg.norm(f))))
    return worst
