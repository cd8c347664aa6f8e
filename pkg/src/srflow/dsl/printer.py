"""Pretty-printer producing source text that the parser reads back."""

from __future__ import annotations

from .nodes import Binary, Const, Piecewise, Pow, Unary, Var

# binding strength: larger binds tighter
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4, "atom": 5}


def format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _prec(e):
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Const) and e.value < 0:
        return _PREC["neg"]
    if isinstance(e, Pow):
        return _PREC["pow"]
    return _PREC["atom"]


def _wrap(e, min_prec):
    s = to_source(e)
    return f"({s})" if _prec(e) < min_prec else s


def to_source(e) -> str:
    """Render ``e`` in the expression language."""
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Binary):
        p = _PREC[e.op]
        sym = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[e.op]
        # left-associative: the right operand needs strictly tighter binding
        return _wrap(e.left, p) + sym + _wrap(e.right, p + 1)
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _PREC["neg"])
        return f"{e.op}({to_source(e.arg)})"
    if isinstance(e, Pow):
        k = e.exponent
        if k.denominator == 1 and k > 0:
            exp = str(k.numerator)
        elif k.denominator == 1:
            exp = f"({k.numerator})"
        else:
            exp = f"({k.numerator}/{k.denominator})"
        return _wrap(e.base, _PREC["atom"]) + "^" + exp
    if isinstance(e, Piecewise):
        return (
            f"piecewise({e.name} {e.cmp} {format_number(e.threshold)}, "
            f"{to_source(e.if_true)}, {to_source(e.if_false)})"
        )
    raise TypeError(type(e))
