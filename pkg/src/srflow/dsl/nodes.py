"""Immutable expression trees for scalar component functions.

Nodes are hash-consed: structurally identical subtrees are the same Python
object, so equality is identity, hashing is O(1) and common subexpressions
are shared for free (the tape compiler relies on this).
"""

from __future__ import annotations

import math
import threading
import weakref
from fractions import Fraction

from ..errors import DomainError

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "Piecewise",
    "const",
    "var",
    "as_expr",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "apply",
    "piecewise",
    "differentiate",
    "evaluate",
    "substitute",
    "ZERO",
    "ONE",
    "TIME",
    "UNARY_FUNCS",
    "COMPARATORS",
]

TIME = "t"

UNARY_FUNCS = ("sin", "cos", "exp", "ln", "sqrt", "atan")
COMPARATORS = (">=", ">", "<=", "<")

_intern_lock = threading.Lock()
_interned: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


def _make(cls, key, init):
    with _intern_lock:
        node = _interned.get(key)
        if node is None:
            node = object.__new__(cls)
            init(node)
            node._hash = hash(key)
            _interned[key] = node
        return node


class Expr:
    __slots__ = ("_hash", "_size", "_dcache", "_free", "__weakref__")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return self is other

    def __ne__(self, other):
        return self is not other

    def __reduce__(self):
        return (_rebuild, (str(self),))

    # arithmetic sugar, used heavily by the bracket and metric code
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __str__(self):
        from .printer import to_source

        return to_source(self)

    def __repr__(self):
        return f"{type(self).__name__}({self})"

    @property
    def size(self):
        """Number of nodes in the tree (shared subtrees counted once per use)."""
        return self._size

    @property
    def free_symbols(self) -> frozenset:
        return self._free

    def depends_on(self, name):
        return name in self._free

    def is_zero(self):
        return self is ZERO

    def __call__(self, env=None, **kwargs):
        merged = dict(env or {})
        merged.update(kwargs)
        return evaluate(self, merged)


def _rebuild(src):
    from .parser import parse_scalar

    return parse_scalar(src, None)


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {value!r}")
        if value == 0.0:
            value = 0.0  # fold -0.0

        def init(n):
            n.value = value
            n._size = 1
            n._dcache = {}
            n._free = frozenset()

        return _make(cls, (cls, value), init)


class Var(Expr):
    __slots__ = ("name",)

    def __new__(cls, name):
        def init(n):
            n.name = name
            n._size = 1
            n._dcache = {}
            n._free = frozenset((name,))

        return _make(cls, (cls, name), init)


class Unary(Expr):
    __slots__ = ("op", "arg")

    def __new__(cls, op, arg):
        if op != "neg" and op not in UNARY_FUNCS:
            raise ValueError(f"unknown unary op {op!r}")

        def init(n):
            n.op = op
            n.arg = arg
            n._size = 1 + arg._size
            n._dcache = {}
            n._free = arg._free

        return _make(cls, (cls, op, arg), init)


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __new__(cls, op, left, right):
        if op not in ("add", "sub", "mul", "div"):
            raise ValueError(f"unknown binary op {op!r}")

        def init(n):
            n.op = op
            n.left = left
            n.right = right
            n._size = 1 + left._size + right._size
            n._dcache = {}
            n._free = left._free | right._free

        return _make(cls, (cls, op, left, right), init)


class Pow(Expr):
    """``base ** exponent`` with a constant rational exponent."""

    __slots__ = ("base", "exponent")

    def __new__(cls, base, exponent):
        exponent = Fraction(exponent)

        def init(n):
            n.base = base
            n.exponent = exponent
            n._size = 1 + base._size
            n._dcache = {}
            n._free = base._free

        return _make(cls, (cls, base, exponent), init)


class Piecewise(Expr):
    """``if_true`` where ``name <cmp> threshold`` holds, else ``if_false``."""

    __slots__ = ("name", "cmp", "threshold", "if_true", "if_false")

    def __new__(cls, name, cmp, threshold, if_true, if_false):
        if cmp not in COMPARATORS:
            raise ValueError(f"unknown comparator {cmp!r}")
        threshold = float(threshold)

        def init(n):
            n.name = name
            n.cmp = cmp
            n.threshold = threshold
            n.if_true = if_true
            n.if_false = if_false
            n._size = 1 + if_true._size + if_false._size
            n._dcache = {}
            n._free = frozenset((name,)) | if_true._free | if_false._free

        return _make(cls, (cls, name, cmp, threshold, if_true, if_false), init)

    def condition(self, value):
        c = self.threshold
        if self.cmp == ">=":
            return value >= c
        if self.cmp == ">":
            return value > c
        if self.cmp == "<=":
            return value <= c
        return value < c


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)
HALF = Const(0.5)


def const(value):
    return Const(value)


def var(name):
    return Var(name)


def as_expr(value):
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, Fraction)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


# ---------------------------------------------------------------------------
# smart constructors: constant folding, identity elimination and a + a = 2*a

def add(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    if a is b:
        return mul(TWO, a)
    if isinstance(b, Unary) and b.op == "neg":
        return sub(a, b.arg)
    if isinstance(b, Const) and b.value < 0:
        return Binary("sub", a, Const(-b.value))
    return Binary("add", a, b)


def sub(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b is ZERO:
        return a
    if a is ZERO:
        return neg(b)
    if a is b:
        return ZERO
    if isinstance(b, Unary) and b.op == "neg":
        return add(a, b.arg)
    return Binary("sub", a, b)


def mul(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a is ZERO or b is ZERO:
        return ZERO
    if a is ONE:
        return b
    if b is ONE:
        return a
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Const):
        if a.value == -1.0:
            return neg(b)
        if isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Const):
            return mul(Const(a.value * b.left.value), b.right)
        if isinstance(b, Unary) and b.op == "neg":
            return mul(Const(-a.value), b.arg)
    return Binary("mul", a, b)


def div(a, b):
    if isinstance(b, Const):
        if b.value == 0.0:
            return Binary("div", a, b)  # evaluation reports the domain error
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b is ONE:
            return a
    if a is ZERO:
        return ZERO
    return Binary("div", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    if isinstance(a, Binary) and a.op == "sub":
        return Binary("sub", a.right, a.left)
    return Unary("neg", a)


def power(base, exponent):
    if isinstance(exponent, Expr):
        if not isinstance(exponent, Const):
            raise ValueError("exponent must be constant")
        exponent = exponent.value
    exponent = _as_fraction(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        try:
            value = _pow_value(base.value, exponent)
        except DomainError:
            return Pow(base, exponent)
        if math.isfinite(value):
            return Const(value)
    if isinstance(base, Pow) and exponent.denominator == 1 and base.exponent.denominator == 1:
        return Pow(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def _as_fraction(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    frac = Fraction(value).limit_denominator(1_000_000)
    if abs(float(frac) - value) > 1e-12 * max(1.0, abs(value)):
        raise ValueError(f"exponent {value!r} is not a simple rational")
    return frac


def apply(func, arg):
    if func == "log":
        func = "ln"
    if isinstance(arg, Const):
        value = _unary_value(func, arg.value, None)
        return Const(value)
    return Unary(func, arg)


def piecewise(name, cmp, threshold, if_true, if_false):
    if if_true is if_false:
        return if_true
    return Piecewise(name, cmp, threshold, if_true, if_false)


# ---------------------------------------------------------------------------
# numeric evaluation

def _unary_value(op, x, node):
    if op == "neg":
        return -x
    if op == "sin":
        return math.sin(x)
    if op == "cos":
        return math.cos(x)
    if op == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            raise DomainError("exp overflow", node) from None
    if op == "ln":
        if x <= 0.0:
            raise DomainError(f"log of non-positive value {x!r}", node)
        return math.log(x)
    if op == "sqrt":
        if x < 0.0:
            raise DomainError(f"sqrt of negative value {x!r}", node)
        return math.sqrt(x)
    if op == "atan":
        return math.atan(x)
    raise ValueError(op)


def _pow_value(x, exponent, node=None):
    if exponent.denominator == 1:
        k = exponent.numerator
        if x == 0.0 and k < 0:
            raise DomainError("zero raised to a negative power", node)
        try:
            return x**k
        except OverflowError:
            raise DomainError("power overflow", node) from None
    if x < 0.0:
        raise DomainError(f"fractional power of negative value {x!r}", node)
    if x == 0.0 and exponent < 0:
        raise DomainError("zero raised to a negative power", node)
    try:
        return x ** float(exponent)
    except OverflowError:
        raise DomainError("power overflow", node) from None


def evaluate(expr, env):
    """Evaluate ``expr`` with variable values from the mapping ``env``.

    Raises :class:`DomainError` naming the offending node when an operator
    leaves its domain. Only the selected branch of a piecewise node runs.
    """
    return _eval(expr, env)


def _eval(e, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise KeyError(f"no value for variable '{e.name}'") from None
    if isinstance(e, Binary):
        a = _eval(e.left, env)
        b = _eval(e.right, env)
        op = e.op
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        if b == 0.0:
            raise DomainError("division by zero", e)
        return a / b
    if isinstance(e, Unary):
        return _unary_value(e.op, _eval(e.arg, env), e)
    if isinstance(e, Pow):
        return _pow_value(_eval(e.base, env), e.exponent, e)
    if isinstance(e, Piecewise):
        branch = e.if_true if e.condition(float(env[e.name])) else e.if_false
        return _eval(branch, env)
    raise TypeError(type(e))


# ---------------------------------------------------------------------------
# symbolic differentiation

def differentiate(expr, name):
    """Exact partial derivative of ``expr`` with respect to variable ``name``."""
    if name not in expr._free:
        return ZERO
    cached = expr._dcache.get(name)
    if cached is not None:
        return cached
    result = _diff(expr, name)
    expr._dcache[name] = result
    return result


def _diff(e, name):
    d = differentiate
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Binary):
        a, b = e.left, e.right
        if e.op == "add":
            return add(d(a, name), d(b, name))
        if e.op == "sub":
            return sub(d(a, name), d(b, name))
        if e.op == "mul":
            return add(mul(d(a, name), b), mul(a, d(b, name)))
        # quotient rule in the form a'/b - a b'/b^2
        da, db = d(a, name), d(b, name)
        first = div(da, b)
        if db is ZERO:
            return first
        return sub(first, div(mul(a, db), power(b, 2)))
    if isinstance(e, Unary):
        inner = d(e.arg, name)
        u = e.arg
        if e.op == "neg":
            return neg(inner)
        if e.op == "sin":
            outer = apply("cos", u)
        elif e.op == "cos":
            outer = neg(apply("sin", u))
        elif e.op == "exp":
            outer = e
        elif e.op == "ln":
            return div(inner, u)
        elif e.op == "sqrt":
            return div(inner, mul(TWO, e))
        elif e.op == "atan":
            return div(inner, add(ONE, power(u, 2)))
        else:  # pragma: no cover
            raise ValueError(e.op)
        return mul(outer, inner)
    if isinstance(e, Pow):
        k = e.exponent
        return mul(mul(Const(float(k)), power(e.base, k - 1)), d(e.base, name))
    if isinstance(e, Piecewise):
        # the condition only involves a coordinate compared with a constant,
        # so it is locally constant away from the switching surface
        return piecewise(e.name, e.cmp, e.threshold, d(e.if_true, name), d(e.if_false, name))
    raise TypeError(type(e))


def substitute(expr, mapping):
    """Replace variables by expressions (``mapping``: name -> Expr or number)."""
    mapping = {k: as_expr(v) for k, v in mapping.items()}
    memo = {}

    def go(e):
        if not (e._free & mapping.keys()):
            return e
        hit = memo.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Var):
            out = mapping[e.name]
        elif isinstance(e, Binary):
            out = {"add": add, "sub": sub, "mul": mul, "div": div}[e.op](go(e.left), go(e.right))
        elif isinstance(e, Unary):
            out = neg(go(e.arg)) if e.op == "neg" else apply(e.op, go(e.arg))
        elif isinstance(e, Pow):
            out = power(go(e.base), e.exponent)
        elif isinstance(e, Piecewise):
            if e.name in mapping:
                target = mapping[e.name]
                if not isinstance(target, Var):
                    raise ValueError("piecewise switching variable must map to a variable")
                name = target.name
            else:
                name = e.name
            out = piecewise(name, e.cmp, e.threshold, go(e.if_true), go(e.if_false))
        else:
            out = e
        memo[e] = out
        return out

    return go(expr)
