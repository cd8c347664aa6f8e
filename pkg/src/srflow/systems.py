"""System definition files and the bundled example corpus.

A system file is TOML with expression strings::

    [system]
    name = "heisenberg"
    coords = ["x", "y", "z"]

    [parameters]            # optional numeric constants usable in expressions
    a = 1.0

    [frame]                 # ordered: the frame f_1..f_d of D
    Y = ["1", "0", "-y"]
    Z = ["0", "1", "x"]

    [metric]                # optional, g(f_i, f_j); identity by default
    g = [["1", "0"], ["0", "1"]]

    [fields]                # optional extra named fields
    W = ["0", "0", "1"]

    [flags]
    sbg_expected = false
    riemannian = false

    [candidates.circle-alpha-1]
    x0 = [0, 0, 0]
    T = 2.0
    control = ["cos(t)", "sin(t)"]          # open-loop control, or
    # pieces = [{until = 1.0, control = [...]}, {control = [...]}]
    # coefficients = ["1", "0"]             # feedback field sum a_i f_i
    test = "normal"                         # normal | abnormal | both
    method = "flow"                         # flow | bracket | both
    expected = "NORMAL_CERTIFIED"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dsl import VectorFieldExpr
from .errors import ParseError
from .extremal import ControlSystem, ExtremalCandidate
from .flow import DEFAULT_TOL, PiecewiseControl

__all__ = [
    "SystemDefinition",
    "SystemFileError",
    "CandidateSpec",
    "load_system",
    "loads_system",
    "corpus_names",
    "corpus_path",
    "load_corpus",
    "classify_candidate",
]

TESTS = ("normal", "abnormal", "both")
METHODS = ("flow", "bracket", "both")


class SystemFileError(ParseError):
    """Structural problem in a system definition file."""

    def __init__(self, message, source=None):
        super().__init__(message, None, source)


@dataclass
class CandidateSpec:
    """A designated candidate curve of a system file."""

    name: str
    x0: list
    T: float
    t0: float = 0.0
    control: PiecewiseControl = None
    coefficients: list = None
    max_step: float = None
    test: str = "both"
    method: str = "flow"
    expected: dict = field(default_factory=dict)
    description: str = ""

    @property
    def kind(self):
        return "feedback" if self.coefficients is not None else "control"

    def build(self, system: ControlSystem, tol=DEFAULT_TOL) -> ExtremalCandidate:
        """Integrate the candidate curve (with tangent transport)."""
        if self.coefficients is not None:
            return ExtremalCandidate.from_feedback(
                system, self.coefficients, self.x0, self.t0, self.T, tol, self.max_step, name=self.name
            )
        return ExtremalCandidate.from_control(
            system, self.control, self.x0, self.t0, self.T, tol, self.max_step, name=self.name
        )


@dataclass
class SystemDefinition:
    """Parsed system file: the control system plus its candidates."""

    system: ControlSystem
    candidates: dict
    path: str = None
    raw: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.system.name

    def candidate(self, name) -> CandidateSpec:
        if name is None:
            if len(self.candidates) == 1:
                return next(iter(self.candidates.values()))
            raise KeyError(f"system {self.name!r} has several candidates: {sorted(self.candidates)}")
        try:
            return self.candidates[name]
        except KeyError:
            raise KeyError(f"unknown candidate {name!r}; available: {sorted(self.candidates)}") from None

    def field(self, name):
        """Frame or extra field by name."""
        try:
            return self.system.named_field(name)
        except KeyError:
            known = list(self.system.frame_names) + list(self.system.fields)
            raise KeyError(f"unknown field {name!r}; declared: {known}") from None


def _require(table, key, where):
    if key not in table:
        raise SystemFileError(f"missing key {key!r} in [{where}]")
    return table[key]


def _vf(comps, coords, params, where):
    if not isinstance(comps, (list, tuple)) or len(comps) != len(coords):
        raise SystemFileError(f"{where} needs {len(coords)} components")
    return VectorFieldExpr.parse([str(c) for c in comps], coords, params)


def _control(cand, params, where):
    if "pieces" in cand:
        pieces, breaks = [], []
        items = cand["pieces"]
        for k, item in enumerate(items):
            pieces.append([str(c) for c in _require(item, "control", f"{where}.pieces[{k}]")])
            if k < len(items) - 1:
                breaks.append(float(_require(item, "until", f"{where}.pieces[{k}]")))
        return PiecewiseControl(pieces, breaks, params)
    return PiecewiseControl([[str(c) for c in cand["control"]]], (), params)


def loads_system(text, path=None) -> SystemDefinition:
    """Parse a system definition from TOML text."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SystemFileError(f"invalid TOML: {exc}") from None
    sysd = _require(data, "system", "system") if "system" in data else {}
    if not sysd:
        raise SystemFileError("missing [system] table")
    name = sysd.get("name", Path(path).stem if path else "system")
    coords = [str(c) for c in _require(sysd, "coords", "system")]
    params = {str(k): float(v) for k, v in data.get("parameters", {}).items()}
    frame_t = data.get("frame")
    if not frame_t:
        raise SystemFileError("missing [frame] table")
    frame_names = list(frame_t)
    frame = [_vf(v, coords, params, f"frame.{k}") for k, v in frame_t.items()]
    fields = {k: _vf(v, coords, params, f"fields.{k}") for k, v in data.get("fields", {}).items()}
    metric = data.get("metric", {}).get("g")
    cost = data.get("metric", {}).get("cost")
    flags = dict(data.get("flags", {}))
    system = ControlSystem(coords, frame, metric=metric, cost=cost, name=name, frame_names=frame_names,
                           flags=flags, params=params, fields=fields)
    cands = {}
    for cname, cand in data.get("candidates", {}).items():
        where = f"candidates.{cname}"
        has_ctrl = "control" in cand or "pieces" in cand
        has_coef = "coefficients" in cand
        if has_ctrl == has_coef:
            raise SystemFileError(f"[{where}] needs exactly one of control/pieces or coefficients")
        x0 = [float(v) for v in _require(cand, "x0", where)]
        if len(x0) != len(coords):
            raise SystemFileError(f"[{where}] x0 needs {len(coords)} entries")
        test = cand.get("test", "both")
        method = cand.get("method", "flow")
        if test not in TESTS or method not in METHODS:
            raise SystemFileError(f"[{where}] test must be one of {TESTS}, method one of {METHODS}")
        expected = cand.get("expected", {})
        if isinstance(expected, str):
            expected = {test: expected}
        cands[cname] = CandidateSpec(
            name=cname,
            x0=x0,
            T=float(_require(cand, "T", where)),
            t0=float(cand.get("t0", 0.0)),
            control=_control(cand, params, where) if has_ctrl else None,
            coefficients=[str(a) for a in cand["coefficients"]] if has_coef else None,
            max_step=float(cand["max_step"]) if "max_step" in cand else None,
            test=test,
            method=method,
            expected=dict(expected),
            description=cand.get("description", ""),
        )
    return SystemDefinition(system, cands, str(path) if path else None, data)


def load_system(path) -> SystemDefinition:
    """Load a system file; bare corpus names (``"heisenberg"``) are accepted."""
    p = Path(path)
    if not p.exists() and str(path) in corpus_names():
        p = corpus_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read system file {path}: {exc.strerror}") from None
    return loads_system(text, p)


def _corpus_dir():
    return resources.files("srflow") / "corpus"


def corpus_names():
    return sorted(p.name[:-5] for p in _corpus_dir().iterdir() if p.name.endswith(".toml"))


def corpus_path(name):
    return Path(str(_corpus_dir() / f"{name}.toml"))


def load_corpus():
    """All bundled systems keyed by name."""
    return {nm: load_system(corpus_path(nm)) for nm in corpus_names()}


def classify_candidate(defn: SystemDefinition, spec: CandidateSpec, method=None, test=None,
                       tol=DEFAULT_TOL, tol_rank=None):
    """Run the requested tests on a candidate.

    Returns a list of ExtremalVerdict (one per test and method). The
    bracket method needs a feedback candidate (a smooth D-valued field);
    for open-loop controls only the flow method applies.
    """
    from .extremal import abnormal_test, abnormal_test_smooth, normal_test, normal_test_smooth
    from .linalg import RANK_TOL

    tol_rank = RANK_TOL if tol_rank is None else tol_rank
    method = method or spec.method
    test = test or spec.test
    if method not in METHODS or test not in TESTS:
        raise ValueError(f"test must be one of {TESTS}, method one of {METHODS}")
    methods = ("flow", "bracket") if method == "both" else (method,)
    tests = ("abnormal", "normal") if test == "both" else (test,)
    if "bracket" in methods and spec.coefficients is None:
        if method == "bracket":
            raise ValueError("the bracket method needs a candidate given by field coefficients")
        methods = ("flow",)
    system = defn.system
    cand = spec.build(system, tol)
    out = []
    for tname in tests:
        for m in methods:
            if tname == "abnormal" and m == "flow":
                out.append(abnormal_test(cand, tol_rank))
            elif tname == "abnormal":
                out.append(abnormal_test_smooth(cand.field, system, cand.traj, tol_rank=tol_rank))
            elif m == "flow":
                out.append(normal_test(cand, tol_rank))
            else:
                out.append(normal_test_smooth(spec.coefficients, system, cand.traj, tol_rank=tol_rank,
                                              tol=tol, max_step=spec.max_step))
    return out
