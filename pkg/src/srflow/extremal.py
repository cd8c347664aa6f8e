"""Sub-Riemannian systems and the normal/abnormal extremal tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brackets import ad_infinity_span
from .distribution import FrameAlongCurve, transport_closure
from .dsl import (
    ONE,
    TIME,
    ZERO,
    Expr,
    VectorFieldExpr,
    as_expr,
    differentiate,
    evaluate,
    substitute,
)
from .dsl.nodes import Var, power
from .errors import DimensionError, NotNormalizedError, RankError
from .flow import (
    DEFAULT_TOL,
    TDVF,
    PiecewiseControl,
    Trajectory,
    integrate_flow,
    integrate_tangent,
)
from .linalg import (
    AMBIGUOUS as M_AMBIGUOUS,
    MARGIN_FACTOR,
    MEMBER,
    MEMBER_TOL,
    NOT_MEMBER,
    RANK_TOL,
    annihilator,
    classify_membership,
    gram_schmidt,
    numerical_rank,
    projection_residual,
    span_basis,
)

__all__ = [
    "ABNORMAL_CERTIFIED",
    "NORMAL_CERTIFIED",
    "NOT_ABNORMAL",
    "NOT_NORMAL",
    "AMBIGUOUS",
    "ControlSystem",
    "ExtremalCandidate",
    "ExtremalVerdict",
    "abnormal_test",
    "abnormal_test_smooth",
    "perp_distribution",
    "normal_test",
    "normal_test_smooth",
    "NormalGeodesic",
    "integrate_normal_geodesic",
    "GeodesicResidual",
    "geodesic_residual",
    "paraboloid_tangent",
    "symbolic_inverse",
]

ABNORMAL_CERTIFIED = "ABNORMAL_CERTIFIED"
NORMAL_CERTIFIED = "NORMAL_CERTIFIED"
NOT_ABNORMAL = "NOT_ABNORMAL"
NOT_NORMAL = "NOT_NORMAL"
AMBIGUOUS = "AMBIGUOUS"

NORMALIZATION_TOL = 1e-8
CORNER_TOL = 1e-6


# ---------------------------------------------------------------------------
# symbolic matrix helpers

def _det(M):
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    out = ZERO
    for j in range(n):
        if M[0][j] is ZERO:
            continue
        minor = [row[:j] + row[j + 1 :] for row in M[1:]]
        term = M[0][j] * _det(minor)
        out = out + term if j % 2 == 0 else out - term
    return out


def symbolic_inverse(M):
    """Inverse of a small symbolic matrix via the adjugate."""
    n = len(M)
    M = [[as_expr(e) for e in row] for row in M]
    if n == 1:
        return [[ONE / M[0][0]]]
    det = _det(M)
    inv = [[ZERO] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1 :] for k, row in enumerate(M) if k != i]
            cof = _det(minor)
            if (i + j) % 2:
                cof = -cof
            inv[j][i] = cof / det
    return inv


# ---------------------------------------------------------------------------
# systems

class ControlSystem:
    """Control-affine system ``q' = sum_i u_i f_i(q)`` with an SR metric on D.

    Parameters
    ----------
    coords : sequence of str
    frame : sequence of VectorFieldExpr
        Fields ``f_1..f_d`` spanning the distribution.
    metric : d x d nested sequence of Expr, optional
        ``g(f_i, f_j)``; identity (orthonormal frame) by default.
    cost : Expr, optional
        ``L(q, u)`` over the coordinates and ``u1..ud``; defaults to
        ``g(f_u, f_u) / 2``.
    """

    def __init__(self, coords, frame, metric=None, cost=None, name="system", frame_names=None,
                 flags=None, params=None, fields=None):
        self.coords = tuple(coords)
        self.params = dict(params or {})
        self.frame = tuple(frame)
        if not self.frame:
            raise DimensionError("a control system needs at least one frame field")
        if any(f.coords != self.coords for f in self.frame):
            raise DimensionError("frame fields must use the system coordinates")
        d = len(self.frame)
        if metric is None:
            metric = [[ONE if i == j else ZERO for j in range(d)] for i in range(d)]
        metric = tuple(tuple(self.expr(e) for e in row) for row in metric)
        if len(metric) != d or any(len(row) != d for row in metric):
            raise DimensionError(f"metric must be {d}x{d}")
        self.metric = metric
        self.name = name
        self.frame_names = tuple(frame_names) if frame_names else tuple(f"f{i + 1}" for i in range(d))
        self.flags = dict(flags or {})
        self.fields = dict(fields or {})
        self.control_names = tuple(f"u{i + 1}" for i in range(d))
        clash = set(self.control_names) & set(self.coords)
        if clash:
            raise DimensionError(f"coordinate names clash with control names: {sorted(clash)}")
        if cost is None:
            u = [Var(nm) for nm in self.control_names]
            cost = ZERO
            for i in range(d):
                for j in range(d):
                    if metric[i][j] is not ZERO:
                        cost = cost + metric[i][j] * u[i] * u[j]
            cost = cost * 0.5
        if isinstance(cost, str):
            from .dsl import parse_scalar

            cost = parse_scalar(cost, self.coords + self.control_names, self.params)
        self.cost = as_expr(cost)
        self._ginv = None
        self._ext_coord = "q0" if "q0" not in self.coords else "q0_"

    @property
    def dim(self):
        return len(self.coords)

    @property
    def d(self):
        return len(self.frame)

    def expr(self, value):
        """Coerce a number, Expr or source string over the coordinates."""
        if isinstance(value, str):
            from .dsl import parse_scalar

            return parse_scalar(value, self.coords, self.params)
        return as_expr(value)

    @property
    def riemannian(self):
        return self.d == self.dim

    @property
    def cost_coord(self):
        return self._ext_coord

    def named_field(self, name):
        """Frame field or extra named field by name."""
        if name in self.frame_names:
            return self.frame[self.frame_names.index(name)]
        if name in self.fields:
            return self.fields[name]
        raise KeyError(name)

    # numerics
    def frame_matrix(self, q, t=0.0):
        return np.column_stack([f(q, t) for f in self.frame])

    def metric_at(self, q):
        env = dict(zip(self.coords, np.asarray(q, float).tolist()))
        env[TIME] = 0.0
        return np.array([[evaluate(e, env) for e in row] for row in self.metric])

    def metric_inverse(self):
        if self._ginv is None:
            self._ginv = symbolic_inverse(self.metric)
        return self._ginv

    def ambient_metric_at(self, q):
        """Inner product on tangent vectors whose restriction to D is ``g``."""
        F = self.frame_matrix(q)
        Fp = np.linalg.pinv(F)
        return Fp.T @ self.metric_at(q) @ Fp

    def g(self, q, a, b):
        return float(np.asarray(a) @ self.metric_at(q) @ np.asarray(b))

    def velocity(self, q, u, t=0.0):
        return self.frame_matrix(q, t) @ np.asarray(u, float)

    def cost_at(self, q, u):
        env = dict(zip(self.coords, np.asarray(q, float).tolist()))
        env.update(zip(self.control_names, np.asarray(u, float).tolist()))
        env[TIME] = 0.0
        return evaluate(self.cost, env)

    def check(self, points, tol=1e-10):
        """Names of violated invariants at ``points`` (empty when valid)."""
        bad = []
        for q in points:
            G = self.metric_at(q)
            if not np.allclose(G, G.T, atol=tol, rtol=0):
                bad.append("metric_symmetric")
            elif np.min(np.linalg.eigvalsh(0.5 * (G + G.T))) <= 0:
                bad.append("metric_positive")
            F = self.frame_matrix(q)
            if numerical_rank(F).rank < self.d:
                bad.append("frame_independent")
        return sorted(set(bad))

    # fields
    def field_for_control(self, control: PiecewiseControl) -> TDVF:
        return TDVF.from_control(self.frame, control)

    def feedback_field(self, coeffs) -> VectorFieldExpr:
        """``sum_i a_i(q) f_i`` for coefficient expressions ``a``."""
        coeffs = [self.expr(a) for a in coeffs]
        if len(coeffs) != self.d:
            raise DimensionError(f"need {self.d} coefficients, got {len(coeffs)}")
        comps = [ZERO] * self.dim
        for a, f in zip(coeffs, self.frame):
            comps = [c + a * fc for c, fc in zip(comps, f.components)]
        return VectorFieldExpr(comps, self.coords)

    def g_expr(self, a, b):
        out = ZERO
        for i in range(self.d):
            for j in range(self.d):
                if self.metric[i][j] is not ZERO:
                    out = out + self.metric[i][j] * as_expr(a[i]) * as_expr(b[j])
        return out

    def coefficients_of(self, X: VectorFieldExpr):
        """Symbolic frame coefficients of a D-valued field: (F^T F)^{-1} F^T X."""
        F = [[f.components[k] for f in self.frame] for k in range(self.dim)]  # n x d
        FtF = [[sum((F[k][i] * F[k][j] for k in range(self.dim)), ZERO) for j in range(self.d)]
               for i in range(self.d)]
        FtX = [sum((F[k][i] * X.components[k] for k in range(self.dim)), ZERO) for i in range(self.d)]
        inv = symbolic_inverse(FtF)
        return [sum((inv[i][j] * FtX[j] for j in range(self.d)), ZERO) for i in range(self.d)]

    # extended space
    def extended_coords(self):
        return self.coords + (self._ext_coord,)

    def extended_field(self, control: PiecewiseControl) -> TDVF:
        """``(f_u, L(q, u))`` on ``Q x R`` for a piecewise control."""
        coords = self.extended_coords()
        pieces = []
        for piece in control.pieces:
            comps = [ZERO] * self.dim
            for u, f in zip(piece, self.frame):
                comps = [c + u * fc for c, fc in zip(comps, f.components)]
            L = substitute(self.cost, dict(zip(self.control_names, piece)))
            pieces.append(VectorFieldExpr(comps + [L], coords))
        return TDVF(pieces, control.breaks, control=control)

    def extended_velocity(self, q, v):
        """``f~_v(q) = (f_v(q), L(q, v))``."""
        return np.append(self.velocity(q, v), self.cost_at(q, v))

    def __repr__(self):
        return f"ControlSystem({self.name!r}, dim={self.dim}, d={self.d})"


# ---------------------------------------------------------------------------
# candidates and verdicts

class ExtremalCandidate:
    """A trajectory of a control system with its control.

    Build with :meth:`from_control` (open-loop piecewise control) or
    :meth:`from_feedback` (smooth field ``sum a_i(q) f_i``).
    """

    def __init__(self, system, traj, tdvf, control=None, coeffs=None, name="candidate", meta=None):
        self.system = system
        self.traj = traj
        self.tdvf = tdvf
        self.control = control
        self.coeffs = None if coeffs is None else tuple(system.expr(a) for a in coeffs)
        self.name = name
        self.meta = dict(meta or {})
        self._coeff_tape = None

    @classmethod
    def from_control(cls, system, control, x0, t0, T, tol=DEFAULT_TOL, max_step=None, name="candidate"):
        tdvf = system.field_for_control(control)
        traj = integrate_flow(tdvf, x0, t0, t0 + T, tol, max_step=max_step, mode=1)
        return cls(system, traj, tdvf, control=control, name=name)

    @classmethod
    def from_feedback(cls, system, coeffs, x0, t0, T, tol=DEFAULT_TOL, max_step=None, name="candidate"):
        X = system.feedback_field(coeffs)
        tdvf = TDVF.from_field(X)
        traj = integrate_flow(tdvf, x0, t0, t0 + T, tol, max_step=max_step, mode=1)
        return cls(system, traj, tdvf, coeffs=coeffs, name=name)

    @property
    def field(self):
        """The smooth field for feedback candidates (None otherwise)."""
        return self.tdvf.pieces[0] if self.coeffs is not None else None

    def control_at(self, t, side=1):
        if self.control is not None:
            return self.control.value(t, side)
        if self._coeff_tape is None:
            from .dsl import compile_tape

            self._coeff_tape = compile_tape(self.coeffs, self.system.coords)
        from ._backend import eval_checked

        return eval_checked(self._coeff_tape, self.traj(t, side), t)

    def speeds(self, times=None):
        """``g(f_u, f_u)`` along the curve."""
        times = self.traj.t if times is None else times
        out = []
        for tk in times:
            u = self.control_at(tk)
            out.append(self.system.g(self.traj(tk), u, u))
        return np.array(out)

    @property
    def normalized(self):
        return bool(np.max(np.abs(self.speeds() - 1.0)) <= NORMALIZATION_TOL)

    def breakpoints_inside(self):
        return [b for b in self.traj.breakpoints if self.traj.t0 < b < self.traj.t1]


@dataclass
class ExtremalVerdict:
    kind: str
    test: str
    method: str
    evidence: dict = field(default_factory=dict)
    summary: str = ""

    def to_dict(self):
        from .distribution import _jsonable

        return {
            "kind": self.kind,
            "test": self.test,
            "method": self.method,
            "summary": self.summary,
            "evidence": _jsonable({k: v for k, v in self.evidence.items() if not k.startswith("_")}),
        }


# ---------------------------------------------------------------------------
# abnormal tests

def abnormal_test(c: ExtremalCandidate, tol_rank=RANK_TOL, tau_samples=None) -> ExtremalVerdict:
    """Flow method: rank of the flow-invariant closure of D along the curve."""
    sys_ = c.system
    n = sys_.dim
    D = FrameAlongCurve.from_fields(c.traj, sys_.frame, tol_rank=tol_rank)
    cl = transport_closure(c.tdvf, c.traj, D, tau_samples, tol_rank)
    r = cl.meta["closure_rank"]
    margin0 = cl.meta["closure_margin"]
    margins = np.minimum(cl.margins, margin0)
    firm = bool(np.all(margins >= MARGIN_FACTOR))
    ranks = cl.rank
    evidence = {
        "closure_rank": r,
        "dim": n,
        "rank_profile": {"t": cl.times, "rank": ranks, "margin": margins},
        "closure_sigma": cl.meta["closure_sigma"],
        "min_margin": float(np.min(margins)),
        "tol_rank": tol_rank,
        "tau_samples": cl.meta["tau_samples"],
        "lower_bound": cl.meta["lower_bound"],
        "_closure": cl,
    }
    if r < n and np.all(ranks < n) and firm:
        ann = annihilator(cl.meta["S0"], tol_rank)
        evidence["annihilator_t_start"] = ann
        kind = ABNORMAL_CERTIFIED
        summary = f"flow closure of D has rank {r} < {n} along the curve"
    elif r == n and (margin0 >= MARGIN_FACTOR or np.any(margins >= MARGIN_FACTOR)):
        kind = NOT_ABNORMAL
        summary = f"flow closure of D has full rank {n}"
    else:
        kind = AMBIGUOUS
        summary = f"closure rank {r} of {n} decided with small margin {float(np.min(margins)):.3g}"
    return ExtremalVerdict(kind, "abnormal", "flow", evidence, summary)


def _d_valued_residual(system, X, traj):
    worst = 0.0
    for q, tk in zip(traj.states, traj.t):
        F = system.frame_matrix(q, tk)
        worst = max(worst, projection_residual(span_basis(F), X(q, tk)))
    return worst


def abnormal_test_smooth(X: VectorFieldExpr, system: ControlSystem, traj: Trajectory, depth_cap=None,
                         tol_rank=RANK_TOL) -> ExtremalVerdict:
    """Bracket method: constant-rank ``ad^inf_X(D)`` along an integral curve of ``X``."""
    res = _d_valued_residual(system, X, traj)
    if res > MEMBER_TOL:
        raise ValueError(f"field is not D-valued along the curve (residual {res:.3g})")
    _, prof = ad_infinity_span(X, system.frame, traj, tol_rank, depth_cap)
    n = system.dim
    evidence = {
        "rank_profile": prof.to_dict(),
        "depth": prof.meta["depth"],
        "stabilized": prof.meta["stabilized"],
        "capped": prof.meta["capped"],
        "dim": n,
        "tol_rank": tol_rank,
        "min_margin": float(np.min(prof.margins)),
        "_profile": prof,
    }
    ranks = prof.ranks
    if not prof.constant:
        drops = prof.drop_locations()
        evidence["rank_drop_times"] = drops
        evidence["rank_drop_interval"] = [float(drops.min()), float(drops.max())] if len(drops) else None
        return ExtremalVerdict(
            AMBIGUOUS, "abnormal", "bracket", evidence,
            f"rank of ad^inf span varies ({ranks.min()}..{ranks.max()}); the bracket criterion "
            "needs constant rank, use the flow method",
        )
    r = int(ranks[0])
    if prof.ambiguous:
        return ExtremalVerdict(AMBIGUOUS, "abnormal", "bracket", evidence,
                               f"rank {r} decided with small margin")
    if r == n:
        return ExtremalVerdict(NOT_ABNORMAL, "abnormal", "bracket", evidence,
                               f"ad^inf span has full rank {n}")
    if prof.meta["capped"]:
        return ExtremalVerdict(AMBIGUOUS, "abnormal", "bracket", evidence,
                               f"depth cap reached with rank {r} still growing")
    return ExtremalVerdict(ABNORMAL_CERTIFIED, "abnormal", "bracket", evidence,
                           f"ad^inf span has constant rank {r} < {n}")


# ---------------------------------------------------------------------------
# normal tests

def _unit_velocity(c, t, side=1):
    u = c.control_at(t, side)
    q = c.traj(t, side)
    s = c.system.g(q, u, u)
    if s <= 0:
        raise NotNormalizedError(f"zero velocity at t={t:.6g}; cannot normalize")
    return c.system.velocity(q, u / math.sqrt(s), t), u / math.sqrt(s)


def perp_distribution(c: ExtremalCandidate, allow_rescale=True) -> FrameAlongCurve:
    """``D^perp = {Y in D : g(Y, f_u) = 0}`` as an orthonormal frame along the curve.

    With ``allow_rescale`` the velocity is normalized pointwise (the
    subspace does not depend on the speed); otherwise an unnormalized
    candidate raises NotNormalizedError.
    """
    if not allow_rescale and not c.normalized:
        raise NotNormalizedError("candidate control is not normalized")
    sys_ = c.system
    d, n = sys_.d, sys_.dim
    traj = c.traj
    if d == 1:
        return FrameAlongCurve(traj, traj.t, np.zeros((len(traj.t), n, 0)), "orthonormalized")
    out = []
    order = None
    prev = None
    for k, tk in enumerate(traj.t):
        side = -1 if k == len(traj.t) - 1 else 1
        q = traj(tk, side)
        G = sys_.metric_at(q)
        _, uhat = _unit_velocity(c, tk, side)
        gu = G @ uhat
        # column j: e_j - g(e_j, u) u
        cols = np.array([np.eye(d)[:, j] - gu[j] * uhat for j in range(d)]).T
        norms = np.sqrt(np.einsum("ij,ik,kj->j", cols, G, cols))
        if order is None:
            order = list(np.argsort(-norms)[: d - 1])
        try:
            A = gram_schmidt(cols[:, order], G)
        except RankError:
            order = list(np.argsort(-norms)[: d - 1])
            A = gram_schmidt(cols[:, order], G)
        if prev is not None:
            # keep orientation continuous for nicer output
            for j in range(A.shape[1]):
                if A[:, j] @ G @ prev[:, j] < 0:
                    A[:, j] = -A[:, j]
        prev = A
        out.append(sys_.frame_matrix(q, tk) @ A)
    return FrameAlongCurve(traj, traj.t, np.array(out), "orthonormalized")


def _corner_times(c):
    corners = []
    for b in c.breakpoints_inside():
        left, _ = _unit_velocity(c, b, -1)
        right, _ = _unit_velocity(c, b, 1)
        jump = float(np.linalg.norm(left - right))
        if jump > CORNER_TOL:
            corners.append((b, jump))
    return corners


def normal_test(c: ExtremalCandidate, tol_rank=RANK_TOL, member_tol=MEMBER_TOL, tau_samples=None) -> ExtremalVerdict:
    """Flow method: the velocity must stay outside the flow closure of ``D^perp``.

    An unnormalized candidate is handled by normalizing its velocity
    pointwise; the closure only depends on the curve, not its speed.
    Velocity corners at control breakpoints give NOT_NORMAL.
    """
    speeds = c.speeds()
    evidence = {
        "tol_rank": tol_rank,
        "member_tol": member_tol,
        "normalized": bool(np.max(np.abs(speeds - 1)) <= NORMALIZATION_TOL),
        "max_speed_deviation": float(np.max(np.abs(speeds - 1))),
    }
    if np.min(speeds) <= 0:
        raise NotNormalizedError("velocity vanishes on the curve")
    corners = _corner_times(c)
    if corners:
        evidence["corners"] = corners
        return ExtremalVerdict(NOT_NORMAL, "normal", "flow", evidence,
                               f"velocity corner at t={corners[0][0]:.6g}")
    perp = perp_distribution(c)
    cl = transport_closure(c.tdvf, c.traj, perp, tau_samples, tol_rank)
    S_rank = cl.meta["closure_rank"]
    residuals, statuses = [], []
    for k, tk in enumerate(cl.times):
        side = -1 if k == len(cl.times) - 1 else 1
        v, _ = _unit_velocity(c, tk, side)
        Q = cl.basis(k)
        m = classify_membership(projection_residual(Q, v), member_tol)
        residuals.append(m.residual)
        statuses.append(m.status)
    residuals = np.array(residuals)
    evidence.update(
        closure_rank=S_rank,
        closure_margin=cl.meta["closure_margin"],
        residual_profile={"t": cl.times, "residual": residuals},
        min_residual=float(residuals.min()),
        _closure=cl,
        _perp=perp,
    )
    if MEMBER in statuses:
        k = statuses.index(MEMBER)
        evidence["member_time"] = float(cl.times[k])
        return ExtremalVerdict(NOT_NORMAL, "normal", "flow", evidence,
                               f"velocity lies in the closure of D-perp at t={cl.times[k]:.6g}")
    if all(s == NOT_MEMBER for s in statuses) and cl.meta["closure_margin"] >= MARGIN_FACTOR:
        return ExtremalVerdict(NORMAL_CERTIFIED, "normal", "flow", evidence,
                               f"velocity stays outside the rank-{S_rank} closure of D-perp")
    return ExtremalVerdict(AMBIGUOUS, "normal", "flow", evidence,
                           f"membership residual near the threshold (min {residuals.min():.3g})")


def normal_test_smooth(X, system: ControlSystem, traj: Trajectory = None, depth_cap=None,
                       tol_rank=RANK_TOL, member_tol=MEMBER_TOL, x0=None, t0=0.0, T=None,
                       tol=DEFAULT_TOL, max_step=None) -> ExtremalVerdict:
    """Bracket method: ``X`` must stay outside ``ad^inf_X(D^perp)``.

    ``X`` is a D-valued VectorFieldExpr or a sequence of frame coefficients.
    The field is normalized symbolically; when ``traj`` is not already an
    integral curve of the unit field, the unit field is integrated from the
    start of ``traj`` over the same length.
    """
    if isinstance(X, VectorFieldExpr):
        coeffs = system.coefficients_of(X)
    else:
        coeffs = [system.expr(a) for a in X]
    speed2 = system.g_expr(coeffs, coeffs)
    inv_speed = power(speed2, -0.5)
    a_hat = [a * inv_speed for a in coeffs]
    Xhat = system.feedback_field(a_hat)
    g_fa = [system.g_expr([ONE if k == j else ZERO for k in range(system.d)], a_hat)
            for j in range(system.d)]
    perp = [f - Xhat.scale(gj) for f, gj in zip(system.frame, g_fa)]
    perp = [p for p in perp if not p.is_zero()]

    from .flow import integral_curve_residual

    if traj is None or integral_curve_residual(traj, TDVF.from_field(Xhat)) > 1e-6:
        if traj is None:
            if x0 is None or T is None:
                raise ValueError("need a trajectory or x0 and T")
            start, t_start, length = np.asarray(x0, float), t0, T
        else:
            start, t_start = traj.x_start, traj.t_start
            sp = np.array([math.sqrt(max(evaluate(speed2, dict(zip(system.coords, q), t=tk)), 0.0))
                           for q, tk in zip(traj.states, traj.t)])
            length = float(np.trapz(sp, traj.t))
        traj = integrate_flow(Xhat, start, t_start, t_start + length, tol, max_step=max_step, mode=1)

    evidence = {"tol_rank": tol_rank, "member_tol": member_tol, "perp_sections": len(perp)}
    if not perp:
        return ExtremalVerdict(NORMAL_CERTIFIED, "normal", "bracket", evidence,
                               "D-perp is trivial (rank-one distribution)")
    _, prof = ad_infinity_span(Xhat, perp, traj, tol_rank, depth_cap)
    evidence.update(rank_profile=prof.to_dict(), depth=prof.meta["depth"], _profile=prof,
                    stabilized=prof.meta["stabilized"])
    if not prof.constant:
        drops = prof.drop_locations()
        evidence["rank_drop_times"] = drops
        return ExtremalVerdict(AMBIGUOUS, "normal", "bracket", evidence,
                               "rank of ad^inf span of D-perp varies; use the flow method")
    if prof.ambiguous:
        return ExtremalVerdict(AMBIGUOUS, "normal", "bracket", evidence, "rank decided with small margin")
    times = prof.times
    pts = traj(times)
    vals = Xhat.evaluate_many(pts, times)
    # recompute spans at the refined times from the bracket levels
    levels = [perp]
    for _ in range(prof.meta["depth"]):
        from .brackets import lie_bracket

        levels.append([lie_bracket(Xhat, f) for f in levels[-1]])
    cols = [np.stack([f.evaluate_many(pts, times) for lvl in levels for f in lvl], axis=2)]
    stack = cols[0]
    residuals, statuses = [], []
    for k in range(len(times)):
        Q = span_basis(stack[k], tol_rank)
        m = classify_membership(projection_residual(Q, vals[k]), member_tol)
        residuals.append(m.residual)
        statuses.append(m.status)
    residuals = np.array(residuals)
    evidence["min_residual"] = float(residuals.min())
    evidence["residual_profile"] = {"t": times, "residual": residuals}
    if MEMBER in statuses:
        return ExtremalVerdict(NOT_NORMAL, "normal", "bracket", evidence,
                               f"X lies in ad^inf(D-perp) at t={times[statuses.index(MEMBER)]:.6g}")
    if all(s == NOT_MEMBER for s in statuses):
        return ExtremalVerdict(NORMAL_CERTIFIED, "normal", "bracket", evidence,
                               f"X stays outside the rank-{prof.ranks[0]} span ad^inf(D-perp)")
    return ExtremalVerdict(AMBIGUOUS, "normal", "bracket", evidence, "membership near the threshold")


# ---------------------------------------------------------------------------
# normal geodesics

def _momentum_names(system):
    taken = set(system.coords)
    names = []
    for c in system.coords:
        nm = f"p_{c}"
        while nm in taken:
            nm += "_"
        taken.add(nm)
        names.append(nm)
    return names


def hamiltonian_expr(system: ControlSystem):
    """``H = 1/2 sum g^{ij} <p, f_i> <p, f_j>`` and the momentum names."""
    pn = _momentum_names(system)
    p = [Var(nm) for nm in pn]
    h = [sum((pk * fk for pk, fk in zip(p, f.components)), ZERO) for f in system.frame]
    ginv = system.metric_inverse()
    H = ZERO
    for i in range(system.d):
        for j in range(system.d):
            if ginv[i][j] is not ZERO:
                H = H + ginv[i][j] * h[i] * h[j]
    return H * 0.5, pn, h


class NormalGeodesic:
    """Solution of the normal Hamiltonian system.

    Attributes
    ----------
    phase : Trajectory
        Trajectory in ``(q, p)`` coordinates.
    t, q, p : ndarray
    """

    def __init__(self, system, phase, H, pnames, h_exprs):
        self.system = system
        self.phase = phase
        self.H = H
        self.pnames = pnames
        self._h = h_exprs
        n = system.dim
        self.t = phase.t
        self.q = phase.states[:, :n]
        self.p = phase.states[:, n:]

    def __call__(self, t):
        return self.phase(t)[..., : self.system.dim]

    def momentum(self, t):
        return self.phase(t)[..., self.system.dim :]

    def hamiltonian_values(self):
        coords = self.phase.coords
        return np.array([evaluate(self.H, dict(zip(coords, z))) for z in self.phase.states])

    def control(self, t):
        """Maximizing control ``u_i = sum_j g^{ij} <p, f_j>``."""
        z = self.phase(t)
        n = self.system.dim
        q, p = z[:n], z[n:]
        F = self.system.frame_matrix(q, t)
        h = F.T @ p
        return np.linalg.solve(self.system.metric_at(q), h)

    def velocity(self, t):
        return self.phase.velocity(t)[: self.system.dim]

    def covector_ext(self, t, lam_q0=-1.0):
        return np.append(self.momentum(t), lam_q0)


def integrate_normal_geodesic(system: ControlSystem, q0, p0, T, tol=DEFAULT_TOL, t0=0.0,
                              max_step=None) -> NormalGeodesic:
    """Integrate Hamilton's equations of the normal SR Hamiltonian."""
    H, pn, h = hamiltonian_expr(system)
    coords = system.coords + tuple(pn)
    comps = [differentiate(H, nm) for nm in pn] + [-differentiate(H, c) for c in system.coords]
    field_ = VectorFieldExpr(comps, coords)
    z0 = np.concatenate([np.asarray(q0, float), np.asarray(p0, float)])
    if z0.size != 2 * system.dim:
        raise DimensionError(f"q0 and p0 must each have {system.dim} entries")
    phase = integrate_flow(field_, z0, t0, t0 + T, tol, max_step=max_step)
    return NormalGeodesic(system, phase, H, pn, h)


@dataclass
class GeodesicResidual:
    times: np.ndarray
    residual: np.ndarray  # |nabla_v v|_g
    components: np.ndarray  # g(nabla_v v, e_i) for an orthonormal frame
    speed: np.ndarray
    caveat: str = ""

    def max(self):
        return float(np.max(self.residual)) if len(self.residual) else 0.0


def _christoffel(system):
    n = system.dim
    F = [[f.components[k] for f in system.frame] for k in range(n)]  # n x n
    Finv = symbolic_inverse(F)
    g = system.metric
    # G = F^{-T} g F^{-1}
    gFi = [[sum((g[a][b] * Finv[b][j] for b in range(n)), ZERO) for j in range(n)] for a in range(n)]
    G = [[sum((Finv[a][i] * gFi[a][j] for a in range(n)), ZERO) for j in range(n)] for i in range(n)]
    Ginv = symbolic_inverse(G)
    c = system.coords
    dG = [[[differentiate(G[i][j], c[k]) for k in range(n)] for j in range(n)] for i in range(n)]
    Gam = [[[ZERO] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                acc = ZERO
                for l in range(n):
                    if Ginv[k][l] is ZERO:
                        continue
                    acc = acc + Ginv[k][l] * (dG[l][j][i] + dG[l][i][j] - dG[i][j][l])
                Gam[k][i][j] = Gam[k][j][i] = acc * 0.5
    return G, Gam


def geodesic_residual(system: ControlSystem, traj, times=None) -> GeodesicResidual:
    """Covariant acceleration ``nabla_v v`` of a curve for the Levi-Civita connection.

    Riemannian systems only (D = TQ). ``traj`` is a Trajectory of a field on
    the system coordinates or a :class:`NormalGeodesic`. Velocity and
    acceleration come from the stored field, ``a = J v + dX/dt``, not from
    numerical differentiation. The residual is not reparametrization
    invariant; the speed profile is returned and a caveat is set when the
    curve is not unit speed.
    """
    if not system.riemannian:
        raise ValueError("geodesic_residual needs a Riemannian system (frame spans TQ)")
    n = system.dim
    if isinstance(traj, NormalGeodesic):
        ph = traj.phase
    else:
        ph = traj
    fld = ph.field
    times = ph.t if times is None else np.asarray(times, float)
    G, Gam = _christoffel(system)
    from .dsl import compile_tape
    from ._backend import eval_checked

    flat = [G[i][j] for i in range(n) for j in range(n)] + [Gam[k][i][j] for k in range(n) for i in range(n) for j in range(n)]
    tape = compile_tape(flat, system.coords)
    res, comps, speeds = [], [], []
    for tk in times:
        z = ph(tk)
        X = fld.field_at(tk)
        v_full = X(z, tk)
        J = X.jacobian_at(z, tk)
        dXdt = VectorFieldExpr([differentiate(e, TIME) for e in X.components], X.coords)(z, tk)
        a_full = J @ v_full + dXdt
        v, a = v_full[:n], a_full[:n]
        vals = eval_checked(tape, z[:n], tk)
        Gm = vals[: n * n].reshape(n, n)
        Gm_ = vals[n * n :].reshape(n, n, n)
        r = a + np.einsum("kij,i,j->k", Gm_, v, v)
        E = gram_schmidt(np.eye(n), Gm)
        comps.append(E.T @ Gm @ r)
        res.append(math.sqrt(max(float(r @ Gm @ r), 0.0)))
        speeds.append(math.sqrt(max(float(v @ Gm @ v), 0.0)))
    speeds = np.array(speeds)
    caveat = ""
    if np.max(np.abs(speeds - speeds[0])) > 1e-6 * max(1.0, speeds[0]) or abs(speeds[0] - 1) > 1e-6:
        caveat = (f"curve is not unit speed (speed in [{speeds.min():.6g}, {speeds.max():.6g}]); "
                  "the residual includes the tangential acceleration of the parametrization")
    return GeodesicResidual(np.asarray(times), np.array(res), np.array(comps), speeds, caveat)


def paraboloid_tangent(system: ControlSystem, q, u):
    """Columns ``(f_i(q), g(f_u, f_i))`` spanning the tangent space of the paraboloid."""
    q = np.asarray(q, float)
    u = np.asarray(u, float)
    F = system.frame_matrix(q)
    gu = system.metric_at(q) @ u
    return np.vstack([F, gu[None, :]])
