"""Expression language for vector fields and scalar functions."""

from .nodes import (
    ONE,
    TIME,
    ZERO,
    Binary,
    Const,
    Expr,
    Piecewise,
    Pow,
    Unary,
    Var,
    as_expr,
    differentiate,
    evaluate,
    substitute,
)
from .parser import parse_scalar
from .printer import to_source
from .tape import Tape, compile_tape
from .vectorfield import VectorFieldExpr, eval_vf

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "Piecewise",
    "ZERO",
    "ONE",
    "TIME",
    "as_expr",
    "parse_scalar",
    "differentiate",
    "evaluate",
    "substitute",
    "to_source",
    "Tape",
    "compile_tape",
    "VectorFieldExpr",
    "eval_vf",
]
