"""Distributions along curves: transport, flow-invariant closure, invariance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brackets import CurveField, RankProfile, rank_profile
from .errors import DimensionError, RankError
from .flow import TangentTransport, Trajectory, _as_tdvf, integrate_tangent
from .linalg import (
    MEMBER_TOL,
    RANK_TOL,
    gram_schmidt,
    numerical_rank,
    projection_residual,
    span_basis,
)

__all__ = [
    "FrameAlongCurve",
    "transport_closure",
    "InvarianceReport",
    "invariance_check",
    "gram_schmidt_along",
]


class FrameAlongCurve:
    """Spanning vectors of a distribution at the times of a trajectory grid.

    Parameters
    ----------
    base : Trajectory
    times : ndarray (N,)
    vectors : ndarray (N, n, k)
        Column ``j`` of ``vectors[i]`` is the ``j``-th spanning vector at
        ``times[i]``.
    provenance : str
        ``"symbolic restriction"``, ``"flow transport"``, ``"transport
        closure"``, ``"bracket closure"``, ``"orthonormalized"`` or
        ``"samples"``.
    sections : list of CurveField, optional
        Sections generating the columns, used for exact time derivatives.
    """

    def __init__(self, base, times, vectors, provenance="samples", tol_rank=RANK_TOL,
                 sections=None, meta=None):
        self.base = base
        self.times = np.asarray(times, float)
        vectors = np.asarray(vectors, float)
        if vectors.ndim != 3 or vectors.shape[0] != len(self.times):
            raise DimensionError("vectors must have shape (N, n, k) matching times")
        self.vectors = vectors
        self.provenance = provenance
        self.tol_rank = tol_rank
        self.sections = None if sections is None else list(sections)
        self.meta = dict(meta or {})
        self._infos = [numerical_rank(v, tol_rank) for v in vectors]
        self.rank = np.array([info.rank for info in self._infos], dtype=int)
        self.margins = np.array([info.margin for info in self._infos])

    # constructors -----------------------------------------------------
    @classmethod
    def from_fields(cls, traj, fields, times=None, tol_rank=RANK_TOL):
        """Restriction of symbolic fields to the curve."""
        times = traj.t if times is None else np.asarray(times, float)
        pts = traj(times)
        cols = [f.evaluate_many(pts, times) for f in fields]
        vectors = np.stack(cols, axis=2) if cols else np.zeros((len(times), traj.dim, 0))
        sections = [CurveField.restriction(traj, f) for f in fields]
        return cls(traj, times, vectors, "symbolic restriction", tol_rank, sections)

    @classmethod
    def from_sections(cls, traj, sections, times=None, provenance="samples", tol_rank=RANK_TOL):
        times = traj.t if times is None else np.asarray(times, float)
        cols = [np.array([s(tk) for tk in times]) for s in sections]
        vectors = np.stack(cols, axis=2)
        return cls(traj, times, vectors, provenance, tol_rank, sections)

    @classmethod
    def transported(cls, transport: TangentTransport, W0, traj=None, times=None, tol_rank=RANK_TOL):
        """Columns of ``W0`` (at the transport's initial time) pushed by the flow."""
        W0 = np.asarray(W0, float)
        if W0.ndim == 1:
            W0 = W0[:, None]
        traj = transport.base if traj is None else traj
        sections = [CurveField.transported(transport, W0[:, j]) for j in range(W0.shape[1])]
        frame = cls.from_sections(traj, sections, times, "flow transport", tol_rank)
        return frame

    # queries ----------------------------------------------------------
    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.times)

    def info(self, i):
        return self._infos[i]

    def basis(self, i):
        """Orthonormal basis of the span at ``times[i]``."""
        return span_basis(self.vectors[i], self.tol_rank)

    @property
    def constant_rank(self):
        return bool(np.all(self.rank == self.rank[0]))

    @property
    def ambiguous(self):
        return bool(np.any(self.margins < 10.0))

    def rank_profile(self) -> RankProfile:
        return rank_profile(self.times, self.vectors, self.tol_rank, self.dim)

    def to_dict(self):
        return {
            "provenance": self.provenance,
            "coords": list(self.base.coords) if self.base is not None else None,
            "tol_rank": self.tol_rank,
            "t": self.times.tolist(),
            "rank": self.rank.tolist(),
            "vectors": self.vectors.tolist(),
            "meta": _jsonable(self.meta),
        }

    @classmethod
    def from_dict(cls, data, base=None):
        vectors = np.asarray(data["vectors"], float)
        if vectors.size == 0:
            vectors = vectors.reshape(len(data["t"]), len(data.get("coords") or []), 0)
        return cls(base, data["t"], vectors, data["provenance"], data["tol_rank"], meta=data.get("meta"))

    def __repr__(self):
        return f"FrameAlongCurve({self.provenance}, N={len(self.times)}, rank={sorted(set(self.rank.tolist()))})"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _tangent(X, traj):
    if traj.mode >= 1 and (X is None or X is traj.field):
        return integrate_tangent(None, traj)
    return integrate_tangent(_as_tdvf(X) if X is not None else None, traj)


def transport_closure(X, traj: Trajectory, B: FrameAlongCurve, tau_samples=None,
                      tol_rank=None, transport=None) -> FrameAlongCurve:
    """Smallest flow-invariant distribution along the curve containing ``B``.

    Every ``B(tau)`` is pulled back to the initial time with ``V(tau)^{-1}``;
    the span ``S0`` of all pullbacks is pushed forward, so the closure at
    ``t`` is ``V(t) S0``. With ``tau_samples`` smaller than the number of
    frame times, only an evenly spaced subset of ``tau`` is used and the
    result is a lower bound (recorded in ``meta``).
    """
    tol_rank = B.tol_rank if tol_rank is None else tol_rank
    T = transport if transport is not None else _tangent(X, traj)
    N = len(B.times)
    if tau_samples is None or tau_samples >= N:
        idx = np.arange(N)
        subsampled = False
    else:
        idx = np.unique(np.linspace(0, N - 1, max(int(tau_samples), 1)).round().astype(int))
        subsampled = True
    pulled = []
    for i in idx:
        Q = B.basis(i)
        if Q.shape[1] == 0:
            continue
        V = T.at(B.times[i])
        if not np.all(np.isfinite(V)) or abs(np.linalg.det(V)) == 0.0:
            raise RankError(f"singular transport matrix at t={B.times[i]:.6g}")
        pulled.append(np.linalg.solve(V, Q))
    n = traj.dim
    stack = np.hstack(pulled) if pulled else np.zeros((n, 0))
    # columns of the pullbacks are unit-size, so a relative rank on the stack is meaningful
    S0 = span_basis(stack, tol_rank)
    info0 = numerical_rank(stack, tol_rank)
    sections = [CurveField.transported(T, S0[:, j]) for j in range(S0.shape[1])]
    if sections:
        frame = FrameAlongCurve.from_sections(traj, sections, B.times, "transport closure", tol_rank)
    else:
        frame = FrameAlongCurve(traj, B.times, np.zeros((N, n, 0)), "transport closure", tol_rank, [])
    frame.meta.update(
        closure_rank=int(info0.rank),
        closure_margin=info0.margin,
        closure_sigma=info0.sigma[:n].tolist(),
        tau_samples=int(len(idx)),
        lower_bound=subsampled,
    )
    frame.meta["S0"] = S0
    frame.meta["transport"] = T
    return frame


@dataclass
class InvarianceReport:
    flow_invariant: bool
    bracket_invariant: bool
    max_defect: float
    flow_defect: float
    bracket_defect: float
    threshold: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "flow_invariant": self.flow_invariant,
            "bracket_invariant": self.bracket_invariant,
            "max_defect": self.max_defect,
            "flow_defect": self.flow_defect,
            "bracket_defect": self.bracket_defect,
            "threshold": self.threshold,
        }


def _projector_sections(B: FrameAlongCurve):
    """Smooth sections ``P(t) e_i`` of ``B`` from samples (spline derivatives)."""
    n = B.dim
    P = np.array([B.basis(i) @ B.basis(i).T for i in range(len(B.times))])
    return [CurveField.from_samples(B.base, B.times, P[:, :, i]) for i in range(n)]


def invariance_check(X, traj: Trajectory, B: FrameAlongCurve, threshold=MEMBER_TOL,
                     tau_stride=None, transport=None) -> InvarianceReport:
    """Test whether ``B`` is invariant under the flow and under brackets with ``X``.

    The flow test compares ``V(t_ref)^{-1} B(t_ref)`` with every
    ``V(tau)^{-1} B(tau)``. The bracket test checks that
    ``[X_t, b] = db/dt - J b`` lies in ``B`` for spanning sections ``b``:
    the frame's own sections when available (exact derivatives), otherwise
    the projections ``P(t) e_i`` differentiated by cubic splines. Defects
    are relative projection residuals; both flags use ``threshold``.

    Raises
    ------
    RankError
        If the rank of ``B`` is not constant along the curve.
    """
    Xf = _as_tdvf(X) if X is not None else traj.field
    if not B.constant_rank:
        raise RankError(
            f"invariance test needs constant rank, got ranks {sorted(set(B.rank.tolist()))}"
        )
    T = transport if transport is not None else _tangent(X, traj)
    N = len(B.times)
    r = int(B.rank[0])
    n = B.dim
    if r == n or r == 0:
        return InvarianceReport(True, True, 0.0, 0.0, 0.0, threshold, {"rank": r})

    # flow test
    stride = 1 if tau_stride is None else max(1, int(tau_stride))
    ref = 0
    Qref = span_basis(np.linalg.solve(T.at(B.times[ref]), B.basis(ref)), B.tol_rank)
    flow_def = 0.0
    for i in range(0, N, stride):
        P = np.linalg.solve(T.at(B.times[i]), B.basis(i))
        for j in range(P.shape[1]):
            flow_def = max(flow_def, projection_residual(Qref, P[:, j]))

    # bracket test
    sections = B.sections if B.sections else _projector_sections(B)
    duration = max(float(B.times[-1] - B.times[0]), 1e-12)
    br_def = 0.0
    worst_t = None
    for i, tk in enumerate(B.times):
        side = -1 if (traj.is_breakpoint(tk) and i == N - 1) else 1
        Q = B.basis(i)
        x = traj(tk, side)
        J = Xf.jacobian(x, tk, side)
        for s in sections:
            b = s(tk, side)
            db = s.derivative(tk, side)
            Jb = J @ b
            w = db - Jb
            # |b| / duration keeps tiny brackets comparable with the flow defect
            scale = max(np.linalg.norm(db) + np.linalg.norm(Jb), np.linalg.norm(b) / duration)
            if scale <= 1e-300:
                continue
            res = np.linalg.norm(w - Q @ (Q.T @ w)) / scale
            if res > br_def:
                br_def, worst_t = float(res), float(tk)
    return InvarianceReport(
        flow_invariant=flow_def <= threshold,
        bracket_invariant=br_def <= threshold,
        max_defect=max(flow_def, br_def),
        flow_defect=flow_def,
        bracket_defect=br_def,
        threshold=threshold,
        details={"rank": r, "worst_bracket_time": worst_t, "sections": len(sections)},
    )


def gram_schmidt_along(B: FrameAlongCurve, metric, pivot_tol=1e-10) -> FrameAlongCurve:
    """Orthonormalize the frame at each time.

    ``metric`` is an ``(N, n, n)`` array, a single ``(n, n)`` matrix or a
    callable ``t -> (n, n)``; it only needs to be positive-definite on the
    span of the frame.

    Raises
    ------
    RankError
        When the input columns are dependent at some time.
    """
    out = []
    for i, tk in enumerate(B.times):
        if callable(metric):
            M = metric(tk)
        else:
            M = np.asarray(metric, float)
            if M.ndim == 3:
                M = M[i]
        out.append(gram_schmidt(B.vectors[i], M, pivot_tol))
    vectors = np.array(out) if out else B.vectors
    return FrameAlongCurve(B.base, B.times, vectors, "orthonormalized", B.tol_rank, meta=dict(B.meta))
