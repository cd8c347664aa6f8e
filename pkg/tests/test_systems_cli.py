import json
import subprocess
import sys

import numpy as np
import pytest

from srflow.cli import main, verdict_exit_code
from srflow.schemas import validate
from srflow.systems import (
    SystemFileError,
    classify_candidate,
    corpus_names,
    load_corpus,
    load_system,
    loads_system,
)
from srflow.verify import CHECKS, run_checks

MINIMAL = """
[system]
name = "mini"
coords = ["x", "y", "z"]

[parameters]
a = 2.0

[frame]
Y = ["1", "0", "-y"]
Z = ["0", "1", "a*x/2"]

[candidates.arc]
x0 = [0, 0, 0]
T = 1.0
pieces = [{until = 0.5, control = ["1", "0"]}, {control = ["0", "1"]}]
test = "normal"
expected = "NOT_NORMAL"
"""


def test_corpus_complete():
    names = corpus_names()
    for nm in ("heisenberg", "martinet", "dist234", "zelenko235", "zhitomirskii", "flat2d", "sphere2d"):
        assert nm in names


def test_loads_minimal():
    d = loads_system(MINIMAL)
    assert d.name == "mini" and d.system.frame_names == ("Y", "Z")
    spec = d.candidate("arc")
    assert spec.control.breaks == (0.5,)
    assert spec.expected == {"normal": "NOT_NORMAL"}
    np.testing.assert_allclose(d.field("Z")([1.0, 0, 0]), [0, 1, 1])
    with pytest.raises(KeyError):
        d.field("W")


@pytest.mark.parametrize("text", [
    "[system]\ncoords = ['x']\n",
    "[system]\nname='a'\ncoords=['x','y']\n[frame]\nX=['1']\n",
    "[system]\ncoords=['x']\n[frame]\nX=['1']\n[candidates.c]\nx0=[0]\nT=1\n",
    "[system]\ncoords=['x']\n[frame]\nX=['1 +']\n",
    "not toml [",
])
def test_bad_files(text):
    with pytest.raises(SystemFileError.__mro__[1]):
        loads_system(text)


def test_corpus_expected_verdicts():
    for defn in load_corpus().values():
        for spec in defn.candidates.values():
            if not spec.expected:
                continue
            got = {f"{v.test}.{v.method}": v.kind
                   for v in classify_candidate(defn, spec, method="both" if spec.coefficients else "flow")}
            for key, want in spec.expected.items():
                k = key if "." in key else f"{key}.{spec.method if spec.method != 'both' else 'flow'}"
                assert got[k] == want, (defn.name, spec.name, k)


def test_verify_suite_passes():
    rows = run_checks(load_corpus().values(), seed=0)
    bad = [r.line() for r in rows if r.status == "FAIL"]
    assert not bad, bad
    assert {r.check for r in rows} >= {"metric", "antisymmetry", "jacobi", "pairing", "variational",
                                       "flow_bracket", "verdict", "schema"}


def test_verify_seeded_reproducible():
    defs = [load_system("heisenberg")]
    a = [r.to_dict() for r in run_checks(defs, seed=3, only=["pairing"])]
    b = [r.to_dict() for r in run_checks(defs, seed=3, only=["pairing"])]
    assert a == b


def test_verify_unknown_check():
    with pytest.raises(KeyError):
        run_checks([], only=["nope"])
    assert "variational" in CHECKS


def test_exit_code_priority():
    assert verdict_exit_code(["NOT_ABNORMAL", "NORMAL_CERTIFIED"]) == 11
    assert verdict_exit_code(["AMBIGUOUS", "NOT_NORMAL"]) == 14
    assert verdict_exit_code(["NOT_NORMAL", "NOT_ABNORMAL"]) == 13


def _json(capsys, argv):
    code = main(argv + ["--json"])
    return code, json.loads(capsys.readouterr().out)


def test_cli_bracket(capsys):
    code, doc = _json(capsys, ["bracket", "heisenberg", "Y", "Z"])
    assert code == 0
    validate(doc, "bracket")
    assert doc["bracket"] == "2*dz"
    assert main(["bracket", "heisenberg", "Y", "Nope"]) == 2


def test_cli_classify_codes(capsys):
    assert main(["classify", "martinet", "abnormal-line"]) == 10
    assert main(["classify", "heisenberg", "circle-alpha-1"]) == 11
    assert main(["classify", "martinet", "offset-line", "--test", "abnormal"]) == 12
    assert main(["classify", "heisenberg", "corner", "--test", "normal"]) == 13
    assert main(["classify", "zhitomirskii", "x-axis"]) == 14
    capsys.readouterr()
    code, doc = _json(capsys, ["classify", "zhitomirskii", "x-axis"])
    validate(doc, "classify")
    assert code == 14


def test_cli_flow_csv(tmp_path, capsys):
    code, doc = _json(capsys, ["flow", "heisenberg", "circle-alpha-1", "--out", str(tmp_path)])
    assert code == 0
    validate(doc, "flow")
    lines = (tmp_path / "heisenberg_circle-alpha-1.csv").read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,x_3,u_1,u_2"


def test_cli_geodesic(capsys):
    code, doc = _json(capsys, ["geodesic", "heisenberg", "--q0", "0,0,0", "--p0", "1,0,0.5",
                               "--T", str(2 * np.pi)])
    assert code == 0
    validate(doc, "geodesic")
    with pytest.raises(SystemExit):
        main(["geodesic", "heisenberg", "--q0", "0,0,0", "--T", "1"])


def test_cli_cone(capsys):
    code, doc = _json(capsys, ["cone", "heisenberg", "circle-alpha-1", "--needles", "15", "--seed", "4"])
    assert code == 0
    validate(doc, "cone")


def test_cli_verify_filter(capsys):
    assert main(["verify", "heisenberg", "--filter", "brackets,pairing"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_cli_verify_failure(tmp_path, capsys):
    bad = MINIMAL.replace('[candidates.arc]', '[metric]\ng = [["1", "1"], ["0", "1"]]\n\n[candidates.arc]')
    p = tmp_path / "bad.toml"
    p.write_text(bad)
    assert main(["verify", str(p), "--filter", "metric"]) == 1
    assert "FAIL metric_symmetric" in capsys.readouterr().out


def test_cli_missing_file():
    assert main(["classify", "/nonexistent/sys.toml"]) == 2


def test_cli_subprocess_entry_point():
    r = subprocess.run([sys.executable, "-m", "srflow", "bracket", "heisenberg", "Y", "Z"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "2*dz" in r.stdout
