"""Flatten expression DAGs into a linear instruction tape.

The tape is the interface between the symbolic layer and the numeric
kernels: a sequence of SSA instructions over numbered slots. Slots
``0..n-1`` hold the coordinates, slot ``n`` holds ``t`` and instruction ``i``
writes slot ``n + 1 + i``. Shared subtrees are emitted once.
"""

from __future__ import annotations

import numpy as np

from .nodes import TIME, Binary, Const, Piecewise, Pow, Unary, Var

OP_CONST = 0
OP_ADD = 1
OP_SUB = 2
OP_MUL = 3
OP_DIV = 4
OP_NEG = 5
OP_SIN = 6
OP_COS = 7
OP_EXP = 8
OP_LOG = 9
OP_SQRT = 10
OP_ATAN = 11
OP_POWI = 12
OP_POWC = 13
OP_GE = 14
OP_GT = 15
OP_LE = 16
OP_LT = 17
OP_SELECT = 18

_BINARY = {"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL, "div": OP_DIV}
_UNARY = {
    "neg": OP_NEG,
    "sin": OP_SIN,
    "cos": OP_COS,
    "exp": OP_EXP,
    "ln": OP_LOG,
    "sqrt": OP_SQRT,
    "atan": OP_ATAN,
}
_CMP = {">=": OP_GE, ">": OP_GT, "<=": OP_LE, "<": OP_LT}

OP_NAMES = {v: k for k, v in globals().items() if k.startswith("OP_") and isinstance(v, int)}


class Tape:
    """Compiled straight-line program evaluating several expressions at once.

    Attributes
    ----------
    n_in : int
        Number of coordinates (``t`` occupies slot ``n_in``).
    ops, a, b, d : ndarray of int32
        Opcode and operand slots per instruction (``d`` is the condition
        slot of ``SELECT``).
    c : ndarray of float64
        Constant payload (literal, exponent or comparison threshold).
    outputs : ndarray of int32
        Slot holding each requested expression.
    """

    __slots__ = ("n_in", "ops", "a", "b", "d", "c", "outputs", "exprs", "coords", "_pyfunc")

    def __init__(self, n_in, ops, a, b, d, c, outputs, exprs, coords):
        self.n_in = n_in
        self.ops = np.asarray(ops, dtype=np.int32)
        self.a = np.asarray(a, dtype=np.int32)
        self.b = np.asarray(b, dtype=np.int32)
        self.d = np.asarray(d, dtype=np.int32)
        self.c = np.asarray(c, dtype=np.float64)
        self.outputs = np.asarray(outputs, dtype=np.int32)
        self.exprs = tuple(exprs)
        self.coords = tuple(coords)
        self._pyfunc = None

    @property
    def n_slots(self):
        return self.n_in + 1 + len(self.ops)

    @property
    def n_out(self):
        return len(self.outputs)

    def __len__(self):
        return len(self.ops)

    def pyfunc(self):
        """Generated Python function ``f(x_list, t) -> list`` (cached)."""
        if self._pyfunc is None:
            from .._pykernels import codegen

            self._pyfunc = codegen(self)
        return self._pyfunc


def compile_tape(exprs, coords) -> Tape:
    """Compile ``exprs`` (sequence of Expr) over ordered ``coords``."""
    coords = tuple(coords)
    n = len(coords)
    index = {name: i for i, name in enumerate(coords)}
    index[TIME] = n
    ops, a, b, d, c = [], [], [], [], []
    slot_of = {}
    const_slot = {}

    def emit(op, ia=0, ib=0, idd=0, cv=0.0):
        ops.append(op)
        a.append(ia)
        b.append(ib)
        d.append(idd)
        c.append(cv)
        return n + len(ops)

    def constant(value):
        s = const_slot.get(value)
        if s is None:
            s = const_slot[value] = emit(OP_CONST, cv=value)
        return s

    # iterative post-order walk: expression trees from iterated brackets
    # can be deeper than the recursion limit allows
    def visit(root):
        stack = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if node in slot_of:
                continue
            if isinstance(node, Const):
                slot_of[node] = constant(node.value)
                continue
            if isinstance(node, Var):
                if node.name not in index:
                    raise KeyError(f"variable '{node.name}' is not a declared coordinate")
                slot_of[node] = index[node.name]
                continue
            kids = _children(node)
            if not ready:
                stack.append((node, True))
                stack.extend((k, False) for k in kids if k not in slot_of)
                continue
            if isinstance(node, Binary):
                s = emit(_BINARY[node.op], slot_of[node.left], slot_of[node.right])
            elif isinstance(node, Unary):
                s = emit(_UNARY[node.op], slot_of[node.arg])
            elif isinstance(node, Pow):
                k = node.exponent
                op = OP_POWI if k.denominator == 1 else OP_POWC
                s = emit(op, slot_of[node.base], cv=float(k))
            elif isinstance(node, Piecewise):
                if node.name not in index:
                    raise KeyError(f"variable '{node.name}' is not a declared coordinate")
                cond = emit(_CMP[node.cmp], index[node.name], cv=node.threshold)
                s = emit(OP_SELECT, slot_of[node.if_true], slot_of[node.if_false], cond)
            else:  # pragma: no cover
                raise TypeError(type(node))
            slot_of[node] = s

    outputs = []
    for e in exprs:
        visit(e)
        outputs.append(slot_of[e])
    return Tape(n, ops, a, b, d, c, outputs, exprs, coords)


def _children(node):
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, Unary):
        return (node.arg,)
    if isinstance(node, Pow):
        return (node.base,)
    if isinstance(node, Piecewise):
        return (node.if_true, node.if_false)
    return ()
