"""Hyperplane curves on the extended space, contact lifts and needle cones.

Hyperplanes are stored as projectively normalized covectors (unit norm,
first nonzero entry positive). The extended space appends the cost
coordinate as the last coordinate; ``-d/dq0`` is the direction of
decreasing cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, TransversalityError
from .flow import TangentTransport, Trajectory, _as_tdvf, integrate_adjoint, integrate_flow, integrate_tangent

__all__ = [
    "normalize_covector",
    "ProjectiveCovector",
    "HyperplaneCurve",
    "contact_lift_flow",
    "contact_tangency_check",
    "generating_function",
    "NeedleCone",
    "needle_cone",
    "cone_contains",
    "SeparationReport",
    "separation_certificate",
    "extended_candidate",
    "extended_tdvf",
    "extended_trajectory",
    "normal_covector",
    "supporting_hyperplane",
]

_ZERO_TOL = 1e-14


def normalize_covector(lam):
    lam = np.asarray(lam, float).reshape(-1)
    nrm = np.linalg.norm(lam)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise ValueError("covector must be nonzero and finite")
    lam = lam / nrm
    nz = np.flatnonzero(np.abs(lam) > _ZERO_TOL)
    if lam[nz[0]] < 0:
        lam = -lam
    return lam


class ProjectiveCovector:
    """Point ``[lam]`` of the projectivized cotangent space at ``base``.

    Represents the hyperplane ``ker lam``. Equality compares normalized
    covectors (and base points).
    """

    __slots__ = ("base", "covector")

    def __init__(self, base, covector):
        self.base = np.asarray(base, float).reshape(-1)
        cov = normalize_covector(covector)
        if cov.size != self.base.size:
            raise DimensionError("covector and base point sizes differ")
        self.covector = cov

    @property
    def dim(self):
        return self.covector.size

    def kernel_basis(self):
        """Orthonormal basis (columns) of the hyperplane ``ker lam``."""
        return _kernel(self.covector)

    def pair(self, v):
        return float(self.covector @ np.asarray(v, float))

    def __eq__(self, other):
        if not isinstance(other, ProjectiveCovector):
            return NotImplemented
        return np.array_equal(self.base, other.base) and np.allclose(self.covector, other.covector, rtol=0, atol=1e-12)

    def __hash__(self):
        return hash(np.round(self.covector, 10).tobytes())

    def __repr__(self):
        return f"ProjectiveCovector({np.array2string(self.covector, precision=6)})"

    def to_dict(self):
        return {"base": self.base.tolist(), "covector": self.covector.tolist()}


def _kernel(lam):
    # columns orthogonal to lam, from a full SVD of the 1 x m matrix
    _, _, Vt = np.linalg.svd(lam[None, :])
    return Vt[1:].T


@dataclass
class HyperplaneCurve:
    """Normalized covectors ``lam(t_k)`` along an (extended) trajectory."""

    base: Trajectory
    times: np.ndarray
    covectors: np.ndarray  # (N, m), each normalized
    transport: TangentTransport = None
    meta: dict = field(default_factory=dict)

    @property
    def points(self):
        return [ProjectiveCovector(self.base(t), c) for t, c in zip(self.times, self.covectors)]

    def at(self, k):
        return ProjectiveCovector(self.base(self.times[k]), self.covectors[k])

    def evolution_defect(self):
        """Max deviation from ``lam(t) ~ lam(tau) V(tau) V(t)^{-1}`` (tau = start)."""
        T = self.transport if self.transport is not None else integrate_tangent(None, self.base)
        k0 = 0
        lam0 = self.covectors[k0]
        V0 = T.at(self.times[k0])
        worst = 0.0
        for t, lam in zip(self.times, self.covectors):
            pred = normalize_covector(lam0 @ V0 @ np.linalg.inv(T.at(t)))
            worst = max(worst, float(np.linalg.norm(pred - lam)))
        return worst

    def to_dict(self):
        return {
            "t": self.times.tolist(),
            "covectors": self.covectors.tolist(),
            "coords": list(self.base.coords),
        }


def contact_lift_flow(X, traj: Trajectory, h0) -> HyperplaneCurve:
    """Evolve the hyperplane ``h0`` (at the start of ``traj``) by the tangent flow.

    Implemented as adjoint transport ``dlam/dt = -lam J`` followed by
    projective normalization, so ``ker lam(t) = V(t) ker lam(t_start)``.
    """
    lam0 = h0.covector if isinstance(h0, ProjectiveCovector) else normalize_covector(h0)
    cov = integrate_adjoint(X, traj, lam0)
    times = traj.t
    lams = np.array([normalize_covector(cov.at(t)) for t in times])
    return HyperplaneCurve(traj, times, lams, cov.tangent, {"raw": cov})


def contact_tangency_check(X, lifted: HyperplaneCurve, transport=None):
    """Defect profile of the contact condition along a lifted curve.

    For a basis ``w_j`` of ``ker lam(t_start)`` the pushed vectors
    ``V(t) w_j`` must stay in ``ker lam(t)``; the defect at ``t`` is
    ``max_j |lam(t) V(t) w_j| / |V(t) w_j|``. The tangent flow is recomputed
    independently of the covectors being checked.

    Returns
    -------
    times, defects : ndarray
    """
    if transport is None:
        base = lifted.base
        fresh = integrate_flow(_as_tdvf(X) if X is not None else base.field, base.x_start, base.t_start,
                               base.t1 if base.t_start == base.t0 else base.t0, base.tol, mode=1)
        transport = integrate_tangent(None, fresh)
    k0 = 0 if lifted.base.t_start == lifted.times[0] else len(lifted.times) - 1
    W = _kernel(lifted.covectors[k0])
    V0inv = np.linalg.inv(transport.at(lifted.times[k0]))
    out = []
    for t, lam in zip(lifted.times, lifted.covectors):
        PW = transport.at(t) @ V0inv @ W
        vals = np.abs(lam @ PW) / np.linalg.norm(PW, axis=0)
        out.append(float(vals.max()) if vals.size else 0.0)
    return np.asarray(lifted.times), np.array(out)


def generating_function(h, X, R, tol=1e-12):
    """``<theta, X>`` for the representative ``theta = lam / <lam, R>``.

    Raises
    ------
    TransversalityError
        If ``<lam, R>`` vanishes (the hyperplane contains ``R``).
    """
    lam = h.covector if isinstance(h, ProjectiveCovector) else np.asarray(h, float)
    denom = float(lam @ np.asarray(R, float))
    if abs(denom) <= tol * np.linalg.norm(lam) * np.linalg.norm(R):
        raise TransversalityError("hyperplane is not transversal to R")
    return float(lam @ np.asarray(X, float)) / denom


# ---------------------------------------------------------------------------
# needle cones

@dataclass
class NeedleCone:
    """Finitely generated cone at ``time`` on the extended trajectory."""

    time: float
    base_point: np.ndarray
    rays: np.ndarray  # (k, m)
    provenance: list = field(default_factory=list)

    def transported(self, transport: TangentTransport, t):
        """Push the rays from ``self.time`` to time ``t``."""
        M = transport.between(t, self.time)
        return NeedleCone(t, transport.base(t), self.rays @ M.T, list(self.provenance))

    def to_dict(self):
        return {
            "time": self.time,
            "base_point": self.base_point.tolist(),
            "rays": self.rays.tolist(),
            "provenance": [list(map(float, p[:1])) + [list(map(float, p[1])), float(p[2])] for p in self.provenance],
        }


def extended_candidate(system, control, x0, t0, T, tol=1e-10, max_step=None, q0=0.0):
    """Extended trajectory ``(q, q0)`` with tangent transport for a control."""
    F = system.extended_field(control)
    y0 = np.append(np.asarray(x0, float), q0)
    return integrate_flow(F, y0, t0, t0 + T, tol, max_step=max_step, mode=1)


def needle_cone(system, control, traj_ext: Trajectory, spec, t=None, transport=None) -> NeedleCone:
    """Cone generated by needle variations ``(t_i, v_i, dt_i)``.

    Ray ``i`` is ``V(t) V(t_i)^{-1} [f~_{v_i} - f~_{u(t_i)}](q~(t_i)) dt_i``.
    ``control`` is any callable ``t -> u`` (a PiecewiseControl or a
    candidate's ``control_at``).

    Raises
    ------
    ValueError
        If some ``t_i`` is a control breakpoint or ``dt_i < 0``.
    """
    T = transport if transport is not None else integrate_tangent(None, traj_ext)
    t = traj_ext.t1 if t is None else float(t)
    n = system.dim
    breaks = getattr(control, "breaks", ())
    rays, prov = [], []
    for ti, v, dti in spec:
        ti = float(ti)
        if dti < 0:
            raise ValueError("needle lengths must be non-negative")
        if traj_ext.is_breakpoint(ti) or any(abs(ti - b) <= 1e-12 for b in breaks):
            raise ValueError(f"needle time {ti:.6g} is a control breakpoint")
        if not (traj_ext.t0 <= ti <= t):
            raise ValueError(f"needle time {ti:.6g} outside [{traj_ext.t0:.6g}, {t:.6g}]")
        qi = traj_ext(ti)[:n]
        u = np.asarray(control(ti), float)
        diff = system.extended_velocity(qi, v) - system.extended_velocity(qi, u)
        rays.append(T.between(t, ti) @ diff * float(dti))
        prov.append((ti, np.asarray(v, float), float(dti)))
    rays = np.array(rays) if rays else np.zeros((0, n + 1))
    return NeedleCone(t, traj_ext(t), rays, prov)


def cone_contains(cone: NeedleCone, w, tol=1e-6):
    """LP test: is ``w`` a nonnegative combination of the rays (within ``tol``)?

    Minimizes the L1 misfit ``|R^T c - w|_1`` over ``c >= 0``; returns
    ``(inside, misfit)`` with the misfit relative to ``max(1, |w|)``.
    """
    w = np.asarray(w, float)
    R = cone.rays.T  # m x k
    m, k = R.shape
    if k == 0:
        res = float(np.abs(w).sum())
        return res <= tol * max(1.0, np.linalg.norm(w)), res
    # variables: c (k), s (m);  -s <= R c - w <= s
    cost = np.concatenate([np.zeros(k), np.ones(m)])
    A = np.block([[R, -np.eye(m)], [-R, -np.eye(m)]])
    b = np.concatenate([w, -w])
    out = linprog(cost, A_ub=A, b_ub=b, bounds=[(0, None)] * (k + m), method="highs")
    if out.status != 0:
        return False, float("inf")
    res = float(out.fun) / max(1.0, float(np.linalg.norm(w)))
    return res <= tol, res


@dataclass
class SeparationReport:
    separates: bool
    strict: bool
    ray_in_plane: bool
    max_pairing: float
    cost_pairing: float
    tol: float

    def to_dict(self):
        return dict(self.__dict__)


def separation_certificate(cone: NeedleCone, h, tol=1e-6, strict_margin=1e-6) -> SeparationReport:
    """Check that ``ker lam`` separates the cone from the decreasing-cost ray.

    ``lam`` is oriented so that ``<lam, -d/dq0> >= 0`` (for ``lam_q0 = 0``
    the orientation that best separates is used). Then ``separates`` iff
    every ray pairs to at most ``tol`` (relative to the ray size),
    ``strict`` iff ``<lam, -d/dq0> > strict_margin`` and ``ray_in_plane``
    iff ``|<lam, d/dq0>| <= tol``.
    """
    lam = h.covector if isinstance(h, ProjectiveCovector) else normalize_covector(h)
    lam = np.asarray(lam, float)
    rays = cone.rays
    scale = np.maximum(1.0, np.linalg.norm(rays, axis=1)) if len(rays) else np.ones(0)
    cost = -lam[-1]
    if abs(cost) <= tol:
        # abnormal: pick the orientation with the smaller worst pairing
        best = None
        for s in (1.0, -1.0):
            worst = float(np.max((rays @ (s * lam)) / scale)) if len(rays) else -np.inf
            if best is None or worst < best[0]:
                best = (worst, s)
        lam = best[1] * lam
    elif cost < 0:
        lam = -lam
    cost = -lam[-1]
    max_pair = float(np.max((rays @ lam) / scale)) if len(rays) else -np.inf
    return SeparationReport(
        separates=bool(max_pair <= tol),
        strict=bool(cost > strict_margin),
        ray_in_plane=bool(abs(lam[-1]) <= tol),
        max_pairing=max_pair,
        cost_pairing=float(cost),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# supporting hyperplanes for SR extremals

def extended_tdvf(c):
    """``(f_u, L)`` on ``Q x R`` for a candidate (control or feedback)."""
    from .dsl import VectorFieldExpr, substitute
    from .flow import TDVF

    system = c.system
    if c.control is not None:
        return system.extended_field(c.control)
    coeffs = [system.expr(a) for a in c.coeffs]
    X = system.feedback_field(coeffs)
    L = substitute(system.cost, dict(zip(system.control_names, coeffs)))
    return TDVF.from_field(VectorFieldExpr(list(X.components) + [L], system.extended_coords()))


def extended_trajectory(c, q0=0.0):
    """Extended curve ``(q(t), q0(t))`` of a candidate with tangent transport."""
    traj = c.traj
    y0 = np.append(traj.x_start, q0)
    t_end = traj.t1 if traj.t_start == traj.t0 else traj.t0
    return integrate_flow(extended_tdvf(c), y0, traj.t_start, t_end, traj.tol, mode=1)


def normal_covector(c, closure_basis, tol=1e-6):
    """Momentum ``p`` at the start of a normal candidate.

    ``p`` annihilates the flow closure of ``D^perp`` (columns of
    ``closure_basis``) and satisfies ``<p, f_j> = g(f_j, u^)`` so that
    ``u^`` maximizes ``<p, f_v> - L(v)``.
    """
    system = c.system
    t = c.traj.t_start
    q = c.traj(t)
    u = c.control_at(t)
    u = u / np.sqrt(system.g(q, u, u))
    F = system.frame_matrix(q, t)
    S = np.asarray(closure_basis, float)
    A = np.vstack([S.T, F.T])
    b = np.concatenate([np.zeros(S.shape[1]), system.metric_at(q) @ u])
    p, *_ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.linalg.norm(A @ p - b)) / max(1.0, float(np.linalg.norm(b)))
    if res > tol:
        raise ValueError(f"no momentum annihilates the closure (residual {res:.3g})")
    return p


def supporting_hyperplane(c, verdict) -> HyperplaneCurve:
    """Hyperplane curve ``ker lam~(t)`` on the extended space for a verdict.

    Normal: ``lam~ = (p, -1)``; abnormal: ``lam~ = (annihilator, 0)``, both
    fixed at the start and carried by the adjoint flow of ``(f_u, L)``.
    """
    from .extremal import ABNORMAL_CERTIFIED, NORMAL_CERTIFIED

    if verdict.kind == NORMAL_CERTIFIED and verdict.test == "normal":
        cl = verdict.evidence["_closure"]
        lam0 = np.append(normal_covector(c, cl.meta["S0"]), -1.0)
    elif verdict.kind == ABNORMAL_CERTIFIED and verdict.test == "abnormal":
        ann = np.atleast_2d(verdict.evidence["annihilator_t_start"])
        lam0 = np.append(ann[0], 0.0)
    else:
        raise ValueError("a supporting hyperplane needs a certified flow-method verdict")
    ext = extended_trajectory(c)
    cov = integrate_adjoint(None, ext, lam0)
    lams = np.array([normalize_covector(cov.at(t)) for t in ext.t])
    return HyperplaneCurve(ext, ext.t, lams, cov.tangent, {"raw": cov, "lam0": lam0, "kind": verdict.kind})
