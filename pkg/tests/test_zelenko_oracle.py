"""Independent symbolic oracle for the rank-5 field on the (2,3,5) line bundle."""

import numpy as np
import pytest

sp = pytest.importorskip("sympy")

from srflow.extremal import abnormal_test, abnormal_test_smooth  # noqa: E402
from srflow.systems import load_system  # noqa: E402

x, y, p, q, z, s = sp.symbols("x y p q z s")
BASE = [x, y, p, q, z]
TOTAL = BASE + [s]
X1 = [0, 0, 0, 1, 0]
X2 = [1, p, q, 0, q**3]


def _br(A, B, coords):
    A, B = sp.Matrix(A), sp.Matrix(B)
    return list(sp.simplify(B.jacobian(coords) * A - A.jacobian(coords) * B))


@pytest.fixture(scope="module")
def structure():
    X3 = _br(X1, X2, BASE)
    X4 = _br(X1, X3, BASE)
    X5 = _br(X2, X3, BASE)
    frame = [X1, X2, X3, X4, X5]
    Finv = sp.simplify(sp.Matrix(frame).T.inv())
    f = {}
    for i in range(5):
        for j in range(5):
            c = sp.simplify(Finv * sp.Matrix(_br(frame[i], frame[j], BASE)))
            for k in range(5):
                f[(k + 1, i + 1, j + 1)] = c[k]
    return f


def _fibre_field(f):
    # the distinguished vertical component built from the structure functions
    return sp.simplify(-f[(5, 1, 4)] + (f[(4, 1, 4)] - 2 * f[(5, 2, 4)]) * s
                       + (2 * f[(4, 2, 4)] - f[(5, 2, 5)]) * s**2 + f[(4, 2, 4)] * s**3)


def _closure_rank(Fexpr, pt):
    H = [a + s * b for a, b in zip(X1, X2)] + [Fexpr]
    ds = [0, 0, 0, 0, 0, 1]
    cols = [ds, H]
    ad = ds
    for _ in range(4):
        ad = _br(H, ad, TOTAL)
        cols.append(ad)
    M = sp.Matrix(cols).T.subs(pt)
    return M.rank()


def test_fibre_field_is_s_over_q(structure):
    assert sp.simplify(_fibre_field(structure) - s / q) == 0


@pytest.mark.parametrize("shift,rank", [(0, 5), (sp.Rational(1, 10), 6)])
def test_symbolic_closure_ranks(structure, shift, rank):
    pt = {x: sp.Rational(3, 10), y: -sp.Rational(1, 5), p: sp.Rational(1, 2), q: sp.Rational(11, 10),
          z: sp.Rational(7, 10), s: sp.Rational(2, 5)}
    assert _closure_rank(_fibre_field(structure) + shift, pt) == rank


@pytest.mark.parametrize("name,rank", [("vertical", 3), ("horizontal", 5), ("perturbed", 6)])
def test_package_ranks_match_oracle(name, rank):
    defn = load_system("zelenko235")
    spec = defn.candidate(name)
    c = spec.build(defn.system)
    v = abnormal_test(c)
    assert v.evidence["closure_rank"] == rank
    prof = abnormal_test_smooth(c.field, defn.system, c.traj).evidence["_profile"]
    assert prof.constant and int(prof.ranks[0]) == rank
    assert np.all(prof.margins >= 10)
