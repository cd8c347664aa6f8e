"""Lie brackets: symbolic, along curves, and iterated-bracket spans."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dsl import ZERO, VectorFieldExpr, differentiate
from .errors import DimensionError, ExpressionTooLarge, GridError, NonFiniteError, NotIntegralCurveError
from .flow import TDVF, Trajectory, integral_curve_residual, _as_tdvf
from .linalg import RANK_TOL, RankInfo, numerical_rank

__all__ = [
    "lie_bracket",
    "ad_power",
    "BracketTable",
    "CurveField",
    "CurveSamples",
    "bracket_along_curve",
    "RankProfile",
    "ad_infinity_span",
    "DEFAULT_NODE_LIMIT",
]

DEFAULT_NODE_LIMIT = 500_000


def lie_bracket(X: VectorFieldExpr, Y: VectorFieldExpr) -> VectorFieldExpr:
    """Symbolic bracket ``[X, Y] = (dY/dx) X - (dX/dx) Y``."""
    if not isinstance(X, VectorFieldExpr) or not isinstance(Y, VectorFieldExpr):
        raise TypeError("lie_bracket expects two VectorFieldExpr")
    if X.coords != Y.coords:
        raise DimensionError(f"cannot bracket fields over {X.coords} and {Y.coords}")
    comps = []
    for yi, xi in zip(Y.components, X.components):
        acc = ZERO
        for name, xj, yj in zip(X.coords, X.components, Y.components):
            acc = acc + differentiate(yi, name) * xj - differentiate(xi, name) * yj
        comps.append(acc)
    return VectorFieldExpr(comps, X.coords)


def ad_power(X: VectorFieldExpr, Z: VectorFieldExpr, k: int, node_limit=DEFAULT_NODE_LIMIT):
    """``ad_X^k(Z)``: ``Z`` for ``k = 0``, else ``[X, ad_X^{k-1}(Z)]``.

    Raises ExpressionTooLarge when an intermediate field exceeds
    ``node_limit`` tree nodes.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    out = Z
    for _ in range(k):
        out = lie_bracket(X, out)
        if out.size > node_limit:
            raise ExpressionTooLarge(f"ad power exceeds {node_limit} nodes")
    return out


class BracketTable:
    """Right-normed brackets of generators up to a given depth.

    Words are 1-based: ``1`` is the first generator, ``(1, (1, 2))`` is
    ``[g1, [g1, g2]]``.
    """

    def __init__(self, generators, depth=3, node_limit=DEFAULT_NODE_LIMIT):
        self.generators = tuple(generators)
        if not self.generators:
            raise ValueError("need at least one generator")
        self.depth = depth
        self.products = {}
        level = {}
        for i, g in enumerate(self.generators, 1):
            level[i] = g
        self.products.update(level)
        for _ in range(depth - 1):
            nxt = {}
            for i, g in enumerate(self.generators, 1):
                for w, f in level.items():
                    if w == i:
                        continue
                    b = lie_bracket(g, f)
                    if b.size > node_limit:
                        raise ExpressionTooLarge(f"bracket {w} exceeds {node_limit} nodes")
                    nxt[(i, w)] = b
            self.products.update(nxt)
            level = nxt

    def __getitem__(self, word):
        return self.products[word]

    def words(self):
        return list(self.products)

    def antisymmetry_residual(self, points):
        """Max ``|[a, b] + [b, a]|`` over pairs of products of length <= 2."""
        fields = [f for w, f in self.products.items() if _word_len(w) <= 2]
        worst = 0.0
        for a, b in itertools.combinations_with_replacement(fields, 2):
            r = lie_bracket(a, b) + lie_bracket(b, a)
            for p in points:
                worst = max(worst, float(np.max(np.abs(r(p)))))
        return worst

    def jacobi_residual(self, points):
        """Max Jacobi residual over triples of generators and depth-2 products."""
        fields = [f for w, f in self.products.items() if _word_len(w) <= 2]
        worst = 0.0
        for a, b, c in itertools.combinations(fields, 3):
            j = lie_bracket(a, lie_bracket(b, c)) + lie_bracket(b, lie_bracket(c, a)) + lie_bracket(c, lie_bracket(a, b))
            for p in points:
                worst = max(worst, float(np.max(np.abs(j(p)))))
        return worst


def _word_len(w):
    return 1 if isinstance(w, int) else 1 + _word_len(w[1])


# ---------------------------------------------------------------------------
# fields along curves

class CurveField:
    """Vector field along a trajectory: ``t -> Z(t)`` with a time derivative.

    Use the constructors :meth:`restriction`, :meth:`transported` and
    :meth:`from_samples`.
    """

    def __init__(self, traj, value, derivative, kind):
        self.traj = traj
        self._value = value
        self._derivative = derivative
        self.kind = kind

    def __call__(self, t, side=1):
        return self._value(t, side)

    def derivative(self, t, side=1):
        return self._derivative(t, side)

    def samples(self, times, sides=None):
        if sides is None:
            sides = np.ones(len(times), dtype=int)
        return np.array([self(tk, int(s) if s else 1) for tk, s in zip(times, sides)])

    @classmethod
    def restriction(cls, traj: Trajectory, W: VectorFieldExpr):
        """``W(x(t), t)``; the derivative uses the chain rule with ``dx/dt = X_t``."""
        from .dsl import TIME

        dWdt = VectorFieldExpr([differentiate(c, TIME) for c in W.components], W.coords)

        def value(t, side=1):
            return W(traj(t, side), t)

        def deriv(t, side=1):
            x = traj(t, side)
            return W.jacobian_at(x, t) @ traj.velocity(t, side) + dWdt(x, t)

        return cls(traj, value, deriv, "restriction")

    @classmethod
    def transported(cls, transport, w, t_ref=None):
        """``V(t) V(t_ref)^{-1} w``; derivative from the dense output of ``V``."""
        base = transport.base
        n = base.dim
        if t_ref is None:
            w0 = np.asarray(w, float)
        else:
            w0 = np.linalg.solve(transport.at(t_ref), np.asarray(w, float))

        def value(t, side=1):
            return transport.at(t, side) @ w0

        def deriv(t, side=1):
            dV = base.dense.derivative(t, side)[n : n + n * n].reshape(n, n)
            return dV @ w0

        return cls(base, value, deriv, "transport")

    @classmethod
    def from_samples(cls, traj: Trajectory, times, values):
        """Cubic-spline interpolation on each smooth piece of the grid.

        Needs at least four samples per piece; breakpoints split the pieces.
        """
        times = np.asarray(times, float)
        values = np.asarray(values, float)
        if len(times) < 4:
            raise GridError(f"need at least 4 samples, got {len(times)}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("non-finite samples")
        cuts = [traj.t0] + [b for b in traj.breakpoints if traj.t0 < b < traj.t1] + [traj.t1]
        splines = []
        for a, b in zip(cuts, cuts[1:]):
            mask = (times >= a) & (times <= b)
            if mask.sum() < 4:
                raise GridError(f"need at least 4 samples on [{a:g}, {b:g}], got {int(mask.sum())}")
            splines.append((a, b, CubicSpline(times[mask], values[mask], axis=0)))

        def pick(t, side):
            for k, (a, b, sp) in enumerate(splines):
                last = k == len(splines) - 1
                if a <= t < b or (t == b and (side < 0 or last)):
                    return sp
            return splines[-1]

        def value(t, side=1):
            return pick(t, side)(t)

        def deriv(t, side=1):
            return pick(t, side)(t, 1)

        return cls(traj, value, deriv, "samples")


@dataclass
class CurveSamples:
    """Vector samples along a curve with one-sided flags at breakpoints.

    ``sides[k]`` is 0 at regular points and -1/+1 for the left/right value at
    a breakpoint (breakpoint times then appear twice).
    """

    times: np.ndarray
    values: np.ndarray
    sides: np.ndarray

    def max_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=1))) if len(self.values) else 0.0


def _sample_times(traj, times=None):
    times = traj.t if times is None else np.asarray(times, float)
    out_t, out_s = [], []
    for tk in times:
        if traj.is_breakpoint(tk) and traj.t0 < tk < traj.t1:
            out_t += [tk, tk]
            out_s += [-1, 1]
        else:
            out_t.append(tk)
            out_s.append(0)
    return np.array(out_t), np.array(out_s, dtype=int)


def bracket_along_curve(X, Z, traj: Trajectory, times=None) -> CurveSamples:
    """``[X_t, Z]`` along ``traj``: ``d/dt Z(x(t)) - (dX_t/dx) Z``.

    ``Z`` may be a :class:`CurveField`, a :class:`VectorFieldExpr`
    (restricted to the curve), or an ``(N, n)`` array of samples on
    ``traj.t`` (interpolated by cubic splines per smooth piece).
    """
    X = _as_tdvf(X)
    if isinstance(Z, VectorFieldExpr):
        Z = CurveField.restriction(traj, Z)
    elif not isinstance(Z, CurveField):
        values = np.asarray(Z, float)
        if values.shape[0] != len(traj.t):
            raise GridError("samples must match the trajectory grid")
        Z = CurveField.from_samples(traj, traj.t, values)
    ts, sides = _sample_times(traj, times)
    out = np.empty((len(ts), traj.dim))
    for k, (tk, s) in enumerate(zip(ts, sides)):
        side = -1 if s < 0 else 1
        x = traj(tk, side)
        z = Z(tk, side)
        out[k] = Z.derivative(tk, side) - X.jacobian(x, tk, side) @ z
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite bracket estimate")
    return CurveSamples(ts, out, sides)


# ---------------------------------------------------------------------------
# iterated brackets

@dataclass
class RankProfile:
    """Per-time numerical rank with singular values and margins."""

    times: np.ndarray
    ranks: np.ndarray
    sigma: np.ndarray  # (N, n), zero padded
    margins: np.ndarray
    tol_rank: float
    meta: dict = field(default_factory=dict)

    @property
    def constant(self):
        return bool(np.all(self.ranks == self.ranks[0])) if len(self.ranks) else True

    @property
    def ambiguous(self):
        return bool(np.any(self.margins < 10.0))

    def drop_locations(self):
        """Times where the rank is below its maximum."""
        top = self.ranks.max()
        return self.times[self.ranks < top]

    def to_rows(self):
        return np.column_stack([self.times, self.ranks, self.sigma])

    def to_csv(self, path):
        n = self.sigma.shape[1]
        header = ",".join(["t", "rank"] + [f"sigma_{i + 1}" for i in range(n)])
        np.savetxt(path, self.to_rows(), delimiter=",", header=header, comments="", fmt="%.17g")

    def to_dict(self):
        return {
            "t": self.times.tolist(),
            "rank": self.ranks.astype(int).tolist(),
            "sigma": self.sigma.tolist(),
            "margin": [m if math.isfinite(m) else None for m in self.margins.tolist()],
            "tol_rank": self.tol_rank,
        }


def rank_profile(times, stacks, tol_rank, n):
    ranks, sig, margins = [], [], []
    for M in stacks:
        info = numerical_rank(M, tol_rank)
        ranks.append(info.rank)
        s = np.zeros(n)
        s[: min(n, info.sigma.size)] = info.sigma[:n]
        sig.append(s)
        margins.append(info.margin)
    return RankProfile(np.asarray(times, float), np.array(ranks), np.array(sig), np.array(margins), tol_rank)


def ad_infinity_span(X: VectorFieldExpr, B, traj: Trajectory, tol_rank=RANK_TOL, depth_cap=None,
                     refine=3, residual_tol=1e-6, node_limit=DEFAULT_NODE_LIMIT):
    """Span of ``{ad_X^k(Z_j)}`` along an integral curve of ``X``.

    Fields are evaluated on the trajectory grid plus ``refine - 1`` interior
    points per cell. Iteration stops when a new level raises the rank
    nowhere, when the rank is full everywhere, or at ``depth_cap``
    (default ``2 * dim``).

    Returns
    -------
    frame : FrameAlongCurve
        Spanning vectors on the trajectory grid (provenance "bracket closure").
    profile : RankProfile
        Ranks on the refined times; ``profile.meta`` records the depth reached,
        whether the span stabilized and whether the cap was hit.
    """
    from .distribution import FrameAlongCurve

    B = list(B)
    n = X.dim
    if any(b.coords != X.coords for b in B):
        raise DimensionError("all fields must share coordinates")
    if traj.coords != X.coords:
        raise DimensionError("trajectory and field coordinates differ")
    res = integral_curve_residual(traj, TDVF.from_field(X))
    if res > residual_tol:
        raise NotIntegralCurveError(f"trajectory is not an integral curve of X (residual {res:.3g})")
    depth_cap = 2 * n if depth_cap is None else int(depth_cap)
    times = traj.refined_times(refine)
    pts = traj(times)
    cols = [[] for _ in times]
    grid_cols = [[] for _ in traj.t]
    level = list(B)
    prev_ranks = None
    stabilized = False
    depth = 0
    capped = False
    profile = None
    for k in range(depth_cap + 1):
        for f in level:
            vals = f.evaluate_many(pts, times)
            gvals = f.evaluate_many(traj.states, traj.t)
            for i, v in enumerate(vals):
                cols[i].append(v)
            for i, v in enumerate(gvals):
                grid_cols[i].append(v)
        profile = rank_profile(times, [np.array(c).T for c in cols], tol_rank, n)
        depth = k
        if prev_ranks is not None and np.all(profile.ranks <= prev_ranks):
            stabilized = True
            break
        if np.all(profile.ranks == n):
            stabilized = True
            break
        prev_ranks = profile.ranks
        if k == depth_cap:
            capped = True
            break
        level = [lie_bracket(X, f) for f in level]
        if any(f.size > node_limit for f in level):
            raise ExpressionTooLarge(f"ad power {k + 1} exceeds {node_limit} nodes")
    profile.meta.update(depth=depth, stabilized=stabilized, depth_cap=depth_cap, capped=capped,
                        integral_residual=res)
    vectors = np.array([np.array(c).T for c in grid_cols])
    frame = FrameAlongCurve(traj, traj.t, vectors, provenance="bracket closure", tol_rank=tol_rank)
    return frame, profile
