"""Command-line front end: ``srflow <subcommand> SYSTEM ...``.

Exit codes: 0 success, 2 usage or parse error, 3 numeric failure, and for
``classify`` a verdict code (see ``VERDICT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    IntegrationError,
    NotIntegralCurveError,
    ParseError,
    RankError,
    SrflowError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
VERDICT_CODES = {
    "ABNORMAL_CERTIFIED": 10,
    "NORMAL_CERTIFIED": 11,
    "NOT_ABNORMAL": 12,
    "NOT_NORMAL": 13,
    "AMBIGUOUS": 14,
}
# a certified verdict decides the exit code before AMBIGUOUS and negatives
_VERDICT_PRIORITY = ("ABNORMAL_CERTIFIED", "NORMAL_CERTIFIED", "AMBIGUOUS", "NOT_NORMAL", "NOT_ABNORMAL")
DEFAULT_SEED = 0


class UsageError(Exception):
    pass


def verdict_exit_code(kinds):
    for k in _VERDICT_PRIORITY:
        if k in kinds:
            return VERDICT_CODES[k]
    return EXIT_OK


def _floats(text, name):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


def _emit(args, doc, kind, text):
    if args.json:
        from .schemas import validate

        validate(doc, kind)
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{kind}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _field_arg(defn, text):
    """Declared field name, or components ``"c1, c2, ..."`` / ``"[c1, ...]"``."""
    from .dsl import VectorFieldExpr

    try:
        return defn.field(text)
    except KeyError as exc:
        parts = [p.strip() for p in text.strip().strip("[]").split(",")]
        if len(parts) != defn.system.dim:
            raise UsageError(exc.args[0]) from None
        return VectorFieldExpr.parse(parts, defn.system.coords, defn.system.params)


def cmd_bracket(args, defn):
    from .brackets import BracketTable, lie_bracket

    A = _field_arg(defn, args.left)
    B = _field_arg(defn, args.right)
    br = lie_bracket(A, B)
    text = br.to_basis_string()
    doc = {
        "system": defn.name,
        "left": args.left,
        "right": args.right,
        "bracket": text,
        "components": [str(c) for c in br.components],
    }
    lines = [f"[{args.left}, {args.right}] = {text}"]
    if args.depth:
        table = BracketTable(defn.system.frame, args.depth)
        names = defn.system.frame_names

        def word_str(w):
            return names[w - 1] if isinstance(w, int) else f"[{names[w[0] - 1]}, {word_str(w[1])}]"

        doc["table"] = [{"word": word_str(w), "field": table[w].to_basis_string()} for w in table.words()]
        lines += [f"{row['word']} = {row['field']}" for row in doc["table"]]
    _emit(args, doc, "bracket", "\n".join(lines))
    return EXIT_OK


def _candidate(defn, name):
    try:
        return defn.candidate(name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def cmd_flow(args, defn):
    spec = _candidate(defn, args.candidate)
    if args.max_step is not None:
        spec.max_step = args.max_step
    c = spec.build(defn.system, args.tol)
    tr = c.traj
    dets = np.linalg.det(tr._aug[:, tr.dim: tr.dim + tr.dim ** 2].reshape(-1, tr.dim, tr.dim))
    doc = {
        "system": defn.name,
        "candidate": spec.name,
        "trajectory": tr.to_dict(),
        "n_steps": int(tr.n_steps),
        "determinant_range": [float(dets.min()), float(dets.max())],
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        tr.to_csv(Path(args.out) / f"{defn.name}_{spec.name}.csv")
    end = ", ".join(f"{v:.10g}" for v in tr.states[-1])
    _emit(args, doc, "flow", f"{defn.name}/{spec.name}: t in [{tr.t0:g}, {tr.t1:g}], "
                             f"{tr.n_steps} steps, end point ({end})")
    return EXIT_OK


def cmd_classify(args, defn):
    from .systems import classify_candidate

    spec = _candidate(defn, args.candidate)
    try:
        verdicts = classify_candidate(defn, spec, args.method, args.test, args.tol, args.tol_rank)
    except ValueError as exc:
        if isinstance(exc, SrflowError):
            raise
        raise UsageError(str(exc)) from None
    code = verdict_exit_code([v.kind for v in verdicts])
    doc = {
        "system": defn.name,
        "candidate": spec.name,
        "verdicts": [v.to_dict() for v in verdicts],
        "expected": spec.expected,
        "exit_code": code,
    }
    lines = []
    for v in verdicts:
        lines.append(f"{v.test:<8} {v.method:<7} {v.kind}: {v.summary}")
        drops = v.evidence.get("rank_drop_times")
        if drops is not None and len(drops):
            lines.append(f"         rank drop near t = {', '.join(f'{x:.4g}' for x in drops)}")
    _emit(args, doc, "classify", "\n".join(lines))
    return code


def cmd_geodesic(args, defn):
    from .extremal import geodesic_residual, integrate_normal_geodesic

    n = defn.system.dim
    q0 = _floats(args.q0, "--q0")
    p0 = _floats(args.p0, "--p0")
    if len(q0) != n or len(p0) != n:
        raise UsageError(f"--q0 and --p0 need {n} entries each")
    g = integrate_normal_geodesic(defn.system, q0, p0, args.T, args.tol)
    tr = g.phase
    Hv = g.hamiltonian_values()
    res = geodesic_residual(defn.system, g).max() if defn.system.riemannian else None
    traj = {
        "coords": list(defn.system.coords),
        "t": g.t.tolist(),
        "states": g.q.tolist(),
        "t_start": float(tr.t_start),
        "breakpoints": [],
        "tol": float(args.tol),
    }
    doc = {
        "system": defn.name,
        "q0": q0,
        "p0": p0,
        "T": float(args.T),
        "trajectory": traj,
        "momenta": g.p.tolist(),
        "hamiltonian_drift": float(np.ptp(Hv)),
    }
    if res is not None:
        doc["geodesic_residual"] = float(res)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)]
        np.savetxt(out / f"{defn.name}_geodesic.csv", np.column_stack([g.t, g.q, g.p]),
                   delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    end = ", ".join(f"{v:.10g}" for v in g.q[-1])
    text = f"{defn.name} normal geodesic: T={args.T:g}, end point ({end}), H drift {np.ptp(Hv):.3g}"
    if res is not None:
        text += f", geodesic residual {res:.3g}"
    _emit(args, doc, "geodesic", text)
    return EXIT_OK


def cmd_cone(args, defn):
    from .contact import needle_cone, separation_certificate, supporting_hyperplane
    from .systems import classify_candidate

    spec = _candidate(defn, args.candidate)
    test = args.test
    verdicts = classify_candidate(defn, spec, "flow", test, args.tol, args.tol_rank)
    cert = [v for v in verdicts if v.kind in ("ABNORMAL_CERTIFIED", "NORMAL_CERTIFIED")]
    if not cert:
        kinds = ", ".join(v.kind for v in verdicts)
        raise UsageError(f"candidate is not certified ({kinds}); no hyperplane to test")
    c = spec.build(defn.system, args.tol)
    hc = supporting_hyperplane(c, cert[0])
    ext = hc.base
    rng = np.random.default_rng(args.seed)
    breaks = set(ext.breakpoints)
    needles = []
    while len(needles) < args.needles:
        ti = float(rng.uniform(ext.t0, ext.t1))
        if ti in breaks:
            continue
        needles.append((ti, rng.normal(size=defn.system.d), float(rng.uniform())))
    cone = needle_cone(defn.system, c.control_at, ext, needles)
    lam = hc.covectors[-1]
    rep = separation_certificate(cone, lam)
    doc = {
        "system": defn.name,
        "candidate": spec.name,
        "time": float(cone.time),
        "rays": cone.rays.tolist(),
        "covector": lam.tolist(),
        "verdict": cert[0].kind,
        "separation": rep.to_dict(),
    }
    text = (f"{defn.name}/{spec.name} ({cert[0].kind}): {len(needles)} needles at t={cone.time:g}; "
            f"separates={rep.separates} strict={rep.strict} ray_in_plane={rep.ray_in_plane} "
            f"max pairing {rep.max_pairing:.3g}")
    _emit(args, doc, "cone", text)
    return EXIT_OK if rep.separates else EXIT_NUMERIC


def cmd_verify(args, defn):
    from .systems import load_corpus
    from .verify import run_checks

    if args.all:
        defns = list(load_corpus().values())
    elif defn is not None:
        defns = [defn]
    else:
        raise UsageError("verify needs a system file or --all")
    only = args.filter.split(",") if args.filter else None
    try:
        results = run_checks(defns, seed=args.seed, only=only)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    ok = all(r.status != "FAIL" for r in results)
    doc = {"passed": ok, "seed": args.seed, "checks": [r.to_dict() for r in results]}
    n_fail = sum(r.status == "FAIL" for r in results)
    text = "\n".join(r.line() for r in results) + f"\n{len(results) - n_fail}/{len(results)} checks passed"
    _emit(args, doc, "verify", text)
    return EXIT_OK if ok else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    # defaults live on the main parser; SUPPRESS lets flags go on either side
    common.add_argument("--tol", type=float, default=argparse.SUPPRESS, help="integration tolerance (1e-10)")
    common.add_argument("--tol-rank", type=float, default=argparse.SUPPRESS,
                        help="relative singular value threshold (1e-8)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for random checks (0)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="JSON output")
    common.add_argument("--out", default=argparse.SUPPRESS, metavar="DIR", help="write output files to DIR")

    p = argparse.ArgumentParser(prog="srflow", description="Flow-based classification of SR extremals.")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--tol-rank", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--json", action="store_true", default=False)
    p.add_argument("--out", default=None, metavar="DIR")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bracket", parents=[common], help="Lie bracket of two fields")
    b.add_argument("system")
    b.add_argument("left", help="field name or comma-separated components")
    b.add_argument("right")
    b.add_argument("--depth", type=int, default=0, help="also print the bracket table up to this depth")

    f = sub.add_parser("flow", parents=[common], help="integrate a candidate curve")
    f.add_argument("system")
    f.add_argument("candidate", nargs="?")
    f.add_argument("--max-step", type=float, default=None)

    c = sub.add_parser("classify", parents=[common], help="normal/abnormal tests for a candidate")
    c.add_argument("system")
    c.add_argument("candidate", nargs="?")
    c.add_argument("--method", choices=("flow", "bracket", "both"), default=None)
    c.add_argument("--test", choices=("normal", "abnormal", "both"), default=None)

    g = sub.add_parser("geodesic", parents=[common], help="integrate a normal geodesic")
    g.add_argument("system")
    g.add_argument("--q0", required=True)
    g.add_argument("--p0", required=True)
    g.add_argument("--T", type=float, required=True)

    k = sub.add_parser("cone", parents=[common], help="needle cone and hyperplane separation")
    k.add_argument("system")
    k.add_argument("candidate", nargs="?")
    k.add_argument("--needles", type=int, default=20)
    k.add_argument("--test", choices=("normal", "abnormal", "both"), default="both")

    v = sub.add_parser("verify", parents=[common], help="run the property suite")
    v.add_argument("system", nargs="?")
    v.add_argument("--all", action="store_true", help="all bundled corpus systems")
    v.add_argument("--filter", default=None, help="comma-separated check names")
    return p


COMMANDS = {
    "bracket": cmd_bracket,
    "flow": cmd_flow,
    "classify": cmd_classify,
    "geodesic": cmd_geodesic,
    "cone": cmd_cone,
    "verify": cmd_verify,
}


def main(argv=None):
    from .systems import load_system

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        defn = load_system(args.system) if getattr(args, "system", None) else None
        return COMMANDS[args.command](args, defn)
    except (UsageError, ParseError, FileNotFoundError, DimensionError) as exc:
        print(f"srflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, DomainError, RankError, NotIntegralCurveError, np.linalg.LinAlgError) as exc:
        print(f"srflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
