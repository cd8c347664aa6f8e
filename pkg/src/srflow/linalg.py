"""Numerical rank, span membership and orthonormalization helpers.

Rank decisions use singular values relative to the largest one; every
decision carries a margin (distance to the threshold as a ratio) so that
callers can flag verdicts that sit too close to the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RankError

RANK_TOL = 1e-8
MEMBER_TOL = 1e-6
MARGIN_FACTOR = 10.0

MEMBER = "member"
NOT_MEMBER = "not_member"
AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class RankInfo:
    """Numerical rank of a set of column vectors.

    ``margin`` is ``min(sigma_r / thr, thr / sigma_{r+1})`` where ``thr`` is
    the absolute threshold; values below ``MARGIN_FACTOR`` mean the rank
    decision is fragile.
    """

    rank: int
    sigma: np.ndarray
    threshold: float
    margin: float

    @property
    def ambiguous(self):
        return self.margin < MARGIN_FACTOR


def numerical_rank(M, tol_rank=RANK_TOL) -> RankInfo:
    """Rank of the column span of ``M`` (shape ``(n, k)``)."""
    M = np.asarray(M, float)
    if M.ndim == 1:
        M = M[:, None]
    if M.size == 0:
        return RankInfo(0, np.zeros(0), 0.0, math.inf)
    s = np.linalg.svd(M, compute_uv=False)
    return _rank_from_sigma(s, tol_rank)


def _rank_from_sigma(s, tol_rank):
    if s.size == 0 or s[0] == 0.0:
        return RankInfo(0, s, 0.0, math.inf)
    thr = tol_rank * s[0]
    r = int(np.count_nonzero(s > thr))
    above = s[r - 1] / thr if r > 0 else math.inf
    below = thr / s[r] if r < s.size and s[r] > 0 else math.inf
    return RankInfo(r, s, thr, float(min(above, below)))


def span_basis(M, tol_rank=RANK_TOL):
    """Orthonormal basis (columns) of the numerical column span of ``M``."""
    M = np.asarray(M, float)
    if M.ndim == 1:
        M = M[:, None]
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    info = _rank_from_sigma(s, tol_rank)
    return U[:, : info.rank]


def annihilator(M, tol_rank=RANK_TOL):
    """Rows spanning the covectors that vanish on the column span of ``M``."""
    M = np.asarray(M, float)
    n = M.shape[0]
    if M.size == 0:
        return np.eye(n)
    U, s, _ = np.linalg.svd(M, full_matrices=True)
    r = _rank_from_sigma(s, tol_rank).rank
    return U[:, r:].T


def projection_residual(Q, v):
    """Relative distance ``|v - Q Q^T v| / |v|`` of ``v`` from span(Q).

    ``Q`` must have orthonormal columns. Returns 0 for ``v = 0``.
    """
    v = np.asarray(v, float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    if Q.shape[1] == 0:
        return 1.0
    r = v - Q @ (Q.T @ v)
    return float(np.linalg.norm(r) / nv)


@dataclass(frozen=True)
class Membership:
    status: str
    residual: float
    margin: float


def classify_membership(residual, tol=MEMBER_TOL, factor=MARGIN_FACTOR) -> Membership:
    """Three-way decision on a relative projection residual.

    ``member`` below ``tol / factor``, ``not_member`` above ``tol * factor``,
    ``ambiguous`` in between. The margin is the ratio to ``tol``.
    """
    if residual <= tol / factor:
        margin = tol / residual if residual > 0 else math.inf
        return Membership(MEMBER, residual, margin)
    if residual >= tol * factor:
        return Membership(NOT_MEMBER, residual, residual / tol)
    margin = max(residual / tol, tol / residual) if residual > 0 else math.inf
    return Membership(AMBIGUOUS, residual, margin)


def membership(Q, v, tol=MEMBER_TOL) -> Membership:
    return classify_membership(projection_residual(Q, v), tol)


def gram_schmidt(vectors, metric=None, pivot_tol=1e-10):
    """Orthonormalize the columns of ``vectors`` with respect to ``metric``.

    Uses modified Gram-Schmidt with one reorthogonalization pass. Raises
    RankError when a column is dependent on the previous ones (its
    remaining norm falls below ``pivot_tol`` times its original norm).
    """
    A = np.array(vectors, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    n, k = A.shape
    G = np.eye(n) if metric is None else np.asarray(metric, float)

    def ip(a, b):
        return float(a @ G @ b)

    out = np.zeros((n, k))
    for j in range(k):
        v = A[:, j].copy()
        n0 = math.sqrt(max(ip(v, v), 0.0))
        for _ in range(2):
            for i in range(j):
                v -= ip(out[:, i], v) * out[:, i]
        nv2 = ip(v, v)
        if n0 == 0.0 or nv2 <= (pivot_tol * n0) ** 2:
            raise RankError(f"vector {j} is numerically dependent on the previous ones")
        out[:, j] = v / math.sqrt(nv2)
    return out
