"""Recursive-descent parser for the expression language.

Grammar (see docs/grammar.md for the EBNF)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := ("-" | "+") unary | power
    power := atom (("^" | "**") unary)?
    atom  := number | name | name "(" args ")" | "(" expr ")"

Errors carry the byte offset of the offending token in the UTF-8 source.
"""

from __future__ import annotations

import math
import re

from ..errors import ParseError, UnknownIdentifierError
from .nodes import (
    COMPARATORS,
    TIME,
    UNARY_FUNCS,
    Const,
    Expr,
    add,
    apply,
    as_expr,
    div,
    mul,
    neg,
    piecewise,
    power,
    sub,
    var,
)

__all__ = ["parse_scalar", "tokenize", "RESERVED"]

RESERVED = frozenset(UNARY_FUNCS) | {"log", "piecewise", "pi", TIME}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|>=|<=|[-+*/^(),<>])
    """,
    re.VERBOSE,
)


class _Tok:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset

    def __repr__(self):
        return f"_Tok({self.kind!r}, {self.text!r}, {self.offset})"


def tokenize(src: str):
    """Split ``src`` into tokens tagged with UTF-8 byte offsets."""
    toks = []
    pos = 0
    byte = 0
    n = len(src)
    while pos < n:
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", byte, src)
        text = m.group()
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, text, byte))
        byte += len(text.encode("utf-8"))
        pos = m.end()
    toks.append(_Tok("end", "", byte))
    return toks


class _Parser:
    def __init__(self, src, coords, params):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0
        self.coords = None if coords is None else set(coords)
        self.params = dict(params or {})

    # token helpers
    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept(self, *texts):
        if self.tok.kind == "op" and self.tok.text in texts:
            return self.advance()
        return None

    def expect(self, text):
        tok = self.accept(text)
        if tok is None:
            self.fail(f"expected '{text}'")
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "end" else f"'{tok.text}'"
        raise ParseError(f"{message}, found {found}", tok.offset, self.src)

    # grammar
    def parse(self):
        e = self.expr()
        if self.tok.kind != "end":
            self.fail("unexpected token")
        return e

    def expr(self):
        e = self.term()
        while True:
            if self.accept("+"):
                e = add(e, self.term())
            elif self.accept("-"):
                e = sub(e, self.term())
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            if self.accept("*"):
                e = mul(e, self.unary())
            elif self.accept("/"):
                e = div(e, self.unary())
            else:
                return e

    def unary(self):
        if self.accept("-"):
            return neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        op = self.accept("^", "**")
        if op is None:
            return base
        tok = self.tok
        exponent = self.unary()
        if not isinstance(exponent, Const):
            self.fail("exponent must be a constant", tok)
        try:
            return power(base, exponent.value)
        except ValueError as exc:
            raise ParseError(str(exc), tok.offset, self.src) from None

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            return self.name(tok)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expected an expression")

    def name(self, tok):
        name = tok.text
        if name == "pi":
            return Const(math.pi)
        if name in self.params:
            return as_expr(self.params[name])
        if name == TIME:
            return var(TIME)
        if self.coords is None or name in self.coords:
            return var(name)
        if name in UNARY_FUNCS or name in ("log", "piecewise"):
            self.fail(f"function '{name}' needs an argument list", tok)
        raise UnknownIdentifierError(name, tok.offset, self.src)

    def call(self, tok):
        fname = tok.text
        self.expect("(")
        if fname == "piecewise":
            return self.piecewise_call(tok)
        if fname not in UNARY_FUNCS and fname != "log":
            raise UnknownIdentifierError(fname, tok.offset, self.src)
        arg = self.expr()
        self.expect(")")
        try:
            return apply(fname, arg)
        except ArithmeticError as exc:
            raise ParseError(f"{fname} of a constant: {exc}", tok.offset, self.src) from None

    def piecewise_call(self, tok):
        cond_tok = self.tok
        if cond_tok.kind != "name":
            self.fail("piecewise condition must start with a coordinate name")
        self.advance()
        name = cond_tok.text
        if name != TIME and self.coords is not None and name not in self.coords:
            raise UnknownIdentifierError(name, cond_tok.offset, self.src)
        if not (self.tok.kind == "op" and self.tok.text in COMPARATORS):
            self.fail("expected a comparison operator")
        cmp = self.advance().text
        thr_tok = self.tok
        threshold = self.expr()
        if not isinstance(threshold, Const):
            self.fail("piecewise threshold must be constant", thr_tok)
        self.expect(",")
        a = self.expr()
        self.expect(",")
        b = self.expr()
        self.expect(")")
        return piecewise(name, cmp, threshold.value, a, b)


def parse_scalar(src: str, coords, params=None) -> Expr:
    """Parse ``src`` into an expression tree.

    Parameters
    ----------
    src : str
        Expression text.
    coords : sequence of str or None
        Declared coordinate names. ``t`` is always allowed. ``None`` accepts
        any identifier as a variable.
    params : mapping, optional
        Named numeric constants substituted at parse time.

    Raises
    ------
    ParseError
        On a syntax error; ``offset`` is the byte position.
    UnknownIdentifierError
        When a name is neither a coordinate, parameter, ``t``, ``pi`` nor a
        built-in function.
    """
    if not isinstance(src, str):
        raise TypeError("expression source must be a string")
    return _Parser(src, coords, params).parse()
