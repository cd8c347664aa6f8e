"""Property suite run by ``srflow verify`` over system files.

Each check returns :class:`CheckResult` rows; a check name can be used as
a filter. Random samples are drawn from a seeded generator so runs are
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brackets import BracketTable
from .distribution import FrameAlongCurve, invariance_check, transport_closure
from .errors import RankError, SrflowError
from .flow import flow_map, integrate_adjoint, integrate_tangent
from .systems import SystemDefinition, classify_candidate

__all__ = ["CheckResult", "CHECKS", "run_checks", "fd_jacobian"]

PAIRING_TOL = 1e-8
VARIATIONAL_TOL = 1e-4
BRACKET_TOL = 1e-9
FD_STEP = 1e-6


@dataclass
class CheckResult:
    check: str
    system: str
    candidate: str
    status: str  # PASS | FAIL | SKIP
    value: float = None
    detail: str = ""

    def to_dict(self):
        v = None if self.value is None or not np.isfinite(self.value) else float(self.value)
        return {"check": self.check, "system": self.system, "candidate": self.candidate,
                "status": self.status, "value": v, "detail": self.detail}

    def line(self):
        val = "" if self.value is None else f" value={self.value:.3g}"
        where = self.system + (f"/{self.candidate}" if self.candidate else "")
        return f"{self.status} {self.check:<14} {where}{val} {self.detail}".rstrip()


def _built(defn, cache):
    if "cands" not in cache:
        cache["cands"] = {}
        for name, spec in defn.candidates.items():
            try:
                cache["cands"][name] = spec.build(defn.system)
            except SrflowError as exc:
                cache["cands"][name] = exc
    return cache["cands"]


def _sample_points(defn, cache, rng, n=6):
    pts = []
    for c in _built(defn, cache).values():
        if isinstance(c, Exception):
            continue
        idx = rng.choice(len(c.traj.t), size=min(n, len(c.traj.t)), replace=False)
        pts.extend(c.traj.states[idx])
    if not pts:
        pts = list(rng.normal(size=(n, defn.system.dim)))
    return np.array(pts)


def check_metric(defn, cache, rng):
    pts = _sample_points(defn, cache, rng)
    bad = defn.system.check(pts)
    if bad:
        return [CheckResult(name, defn.name, None, "FAIL", None, "violated") for name in bad]
    return [CheckResult("metric", defn.name, None, "PASS", None, f"{len(pts)} points")]


def check_brackets(defn, cache, rng):
    pts = _sample_points(defn, cache, rng, n=3)
    table = BracketTable(defn.system.frame, depth=2)
    scale = max(1.0, float(np.max(np.abs(pts))))
    out = []
    for name, res in (("antisymmetry", table.antisymmetry_residual(pts)),
                      ("jacobi", table.jacobi_residual(pts))):
        ok = res <= BRACKET_TOL * scale
        out.append(CheckResult(name, defn.name, None, "PASS" if ok else "FAIL", res))
    return out


def check_pairing(defn, cache, rng):
    out = []
    for name, c in _built(defn, cache).items():
        if isinstance(c, Exception):
            out.append(CheckResult("pairing", defn.name, name, "FAIL", None, str(c)))
            continue
        n = defn.system.dim
        lam0 = rng.normal(size=n)
        vecs = rng.normal(size=(3, n))
        cov = integrate_adjoint(c.tdvf, c.traj, lam0)
        res = cov.pairing_defect(vecs) / (np.linalg.norm(lam0) * np.max(np.linalg.norm(vecs, axis=1)))
        out.append(CheckResult("pairing", defn.name, name, "PASS" if res <= PAIRING_TOL else "FAIL", res))
    return out


def fd_jacobian(X, x0, t0, t1, tol, h=FD_STEP, max_step=None):
    """Central finite-difference Jacobian of the flow map ``x0 -> x(t1)``."""
    x0 = np.asarray(x0, float)
    n = x0.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(x0[j]))
        fp = flow_map(X, t0, t1, x0 + e, tol, max_step=max_step)
        fm = flow_map(X, t0, t1, x0 - e, tol, max_step=max_step)
        J[:, j] = (fp - fm) / (2 * e[j])
    return J


def check_variational(defn, cache, rng):
    out = []
    for name, c in _built(defn, cache).items():
        if isinstance(c, Exception):
            continue
        tr = c.traj
        V = integrate_tangent(None, tr).at(tr.t1, -1)
        J = fd_jacobian(c.tdvf, tr.x_start, tr.t0, tr.t1, 1e-12, max_step=defn.candidates[name].max_step)
        res = float(np.linalg.norm(V - J) / max(np.linalg.norm(V), 1e-300))
        out.append(CheckResult("variational", defn.name, name, "PASS" if res <= VARIATIONAL_TOL else "FAIL", res))
    return out


def check_flow_bracket(defn, cache, rng):
    """Flow invariance and bracket invariance agree for D and its flow closure."""
    out = []
    for name, c in _built(defn, cache).items():
        if isinstance(c, Exception):
            continue
        D = FrameAlongCurve.from_fields(c.traj, defn.system.frame)
        frames = {"D": D}
        try:
            frames["closure"] = transport_closure(c.tdvf, c.traj, D)
        except RankError:
            pass
        for label, B in frames.items():
            try:
                rep = invariance_check(c.tdvf, c.traj, B)
            except RankError as exc:
                out.append(CheckResult("flow_bracket", defn.name, name, "SKIP", None, f"{label}: {exc}"))
                continue
            ok = rep.flow_invariant == rep.bracket_invariant
            detail = f"{label}: flow={rep.flow_invariant} bracket={rep.bracket_invariant}"
            out.append(CheckResult("flow_bracket", defn.name, name, "PASS" if ok else "FAIL",
                                   rep.max_defect, detail))
    return out


def check_verdicts(defn, cache, rng):
    out = []
    for name, spec in defn.candidates.items():
        if not spec.expected:
            continue
        try:
            verdicts = classify_candidate(defn, spec, method="both" if spec.coefficients else "flow")
        except SrflowError as exc:
            out.append(CheckResult("verdict", defn.name, name, "FAIL", None, str(exc)))
            continue
        got = {}
        for v in verdicts:
            got[f"{v.test}.{v.method}"] = v.kind
        for key, want in spec.expected.items():
            if "." in key:
                keys = [key]
            else:
                default = spec.method if spec.method != "both" else "flow"
                keys = [f"{key}.{default}"]
            for k in keys:
                have = got.get(k)
                status = "PASS" if have == want else ("SKIP" if have is None else "FAIL")
                out.append(CheckResult("verdict", defn.name, name, status, None, f"{k}: {have} (expected {want})"))
    return out


def check_schema(defn, cache, rng):
    from .schemas import validate

    out = []
    for name, c in _built(defn, cache).items():
        if isinstance(c, Exception):
            continue
        try:
            validate(c.traj.to_dict(), "trajectory")
            status, detail = "PASS", ""
        except Exception as exc:  # jsonschema.ValidationError
            status, detail = "FAIL", str(exc).splitlines()[0]
        out.append(CheckResult("schema", defn.name, name, status, None, detail))
    return out


CHECKS = {
    "metric": check_metric,
    "brackets": check_brackets,
    "pairing": check_pairing,
    "variational": check_variational,
    "flow_bracket": check_flow_bracket,
    "verdict": check_verdicts,
    "schema": check_schema,
}


def run_checks(defns, seed=0, only=None):
    """Run the property suite over system definitions.

    Parameters
    ----------
    defns : iterable of SystemDefinition
    seed : int
        Seed of the sampling generator (per system, so results do not
        depend on the order of systems).
    only : sequence of str, optional
        Check names to run (``CHECKS`` keys).
    """
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s) {unknown}; available: {sorted(CHECKS)}")
    results = []
    for defn in defns:
        if not isinstance(defn, SystemDefinition):
            raise TypeError("run_checks expects SystemDefinition objects")
        cache = {}
        for nm in names:
            rng = np.random.default_rng([seed, sum(map(ord, defn.name)), sum(map(ord, nm))])
            try:
                results.extend(CHECKS[nm](defn, cache, rng))
            except SrflowError as exc:
                results.append(CheckResult(nm, defn.name, None, "FAIL", None, f"{type(exc).__name__}: {exc}"))
    return results
