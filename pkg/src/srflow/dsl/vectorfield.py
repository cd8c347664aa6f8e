"""Vector fields with symbolic component functions."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .nodes import TIME, ZERO, Expr, as_expr, differentiate, evaluate, substitute
from .parser import parse_scalar
from .printer import format_number, to_source
from .nodes import Binary, Const, Unary

__all__ = ["VectorFieldExpr", "eval_vf"]


class VectorFieldExpr:
    """A vector field ``sum_i components[i] * d/d coords[i]``.

    Instances are immutable. The Jacobian is computed symbolically once and
    cached; entry ``(i, j)`` is the partial of component ``i`` with respect
    to coordinate ``j``.
    """

    __slots__ = ("components", "coords", "_jac", "_tape", "_tape_jac", "_hash")

    def __init__(self, components, coords):
        coords = tuple(coords)
        comps = tuple(as_expr(c) for c in components)
        if len(comps) != len(coords):
            raise DimensionError(
                f"{len(comps)} components for {len(coords)} coordinates"
            )
        if len(coords) == 0:
            raise DimensionError("a vector field needs at least one coordinate")
        if len(set(coords)) != len(coords):
            raise DimensionError(f"duplicate coordinate names in {coords}")
        self.components = comps
        self.coords = coords
        self._jac = None
        self._tape = None
        self._tape_jac = None
        self._hash = hash((comps, coords))

    # construction -----------------------------------------------------
    @classmethod
    def parse(cls, sources, coords, params=None):
        if len(sources) != len(coords):
            raise DimensionError(f"{len(sources)} components for {len(coords)} coordinates")
        return cls([parse_scalar(str(s), coords, params) for s in sources], coords)

    @classmethod
    def zero(cls, coords):
        return cls([ZERO] * len(coords), coords)

    @classmethod
    def coordinate(cls, coords, i):
        """The coordinate field ``d/d coords[i]``."""
        comps = [ZERO] * len(coords)
        comps[i] = Const(1.0)
        return cls(comps, coords)

    # basic protocol ---------------------------------------------------
    @property
    def dim(self):
        return len(self.components)

    def __len__(self):
        return self.dim

    def __getitem__(self, i):
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other):
        if not isinstance(other, VectorFieldExpr):
            return NotImplemented
        return self.coords == other.coords and self.components == other.components

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"VectorFieldExpr({', '.join(map(to_source, self.components))})"

    def __str__(self):
        return self.to_basis_string()

    def to_basis_string(self):
        """Render as a combination of coordinate fields, e.g. ``dx - y*dz``."""
        parts = []
        for comp, name in zip(self.components, self.coords):
            if comp is ZERO:
                continue
            neg = False
            if isinstance(comp, Const):
                neg = comp.value < 0
                mag = abs(comp.value)
                coef = "" if mag == 1.0 else format_number(mag) + "*"
            else:
                if isinstance(comp, Unary) and comp.op == "neg":
                    neg, comp = True, comp.arg
                src = to_source(comp)
                if isinstance(comp, Binary) and comp.op in ("add", "sub"):
                    src = f"({src})"
                coef = src + "*"
            parts.append(("-" if neg else "+", f"{coef}d{name}"))
        if not parts:
            return "0"
        sign, first = parts[0]
        out = ("-" if sign == "-" else "") + first
        for sign, term in parts[1:]:
            out += f" {sign} {term}"
        return out

    def is_zero(self):
        return all(c is ZERO for c in self.components)

    @property
    def free_symbols(self):
        out = frozenset()
        for c in self.components:
            out |= c.free_symbols
        return out

    def depends_on_time(self):
        return TIME in self.free_symbols

    @property
    def size(self):
        return sum(c.size for c in self.components)

    def _check(self, other):
        if not isinstance(other, VectorFieldExpr):
            raise TypeError(f"expected VectorFieldExpr, got {type(other).__name__}")
        if other.coords != self.coords:
            raise DimensionError(f"coordinate mismatch: {self.coords} vs {other.coords}")

    # linear structure -------------------------------------------------
    def __add__(self, other):
        self._check(other)
        return VectorFieldExpr([a + b for a, b in zip(self, other)], self.coords)

    def __sub__(self, other):
        self._check(other)
        return VectorFieldExpr([a - b for a, b in zip(self, other)], self.coords)

    def __neg__(self):
        return VectorFieldExpr([-a for a in self], self.coords)

    def scale(self, factor):
        """Multiply by a scalar function or number."""
        factor = as_expr(factor)
        return VectorFieldExpr([factor * a for a in self], self.coords)

    def __mul__(self, factor):
        if isinstance(factor, VectorFieldExpr):
            return NotImplemented
        return self.scale(factor)

    __rmul__ = __mul__

    def apply_to(self, f: Expr) -> Expr:
        """Directional derivative ``X(f)`` of a scalar expression."""
        out = ZERO
        for comp, name in zip(self.components, self.coords):
            out = out + comp * differentiate(f, name)
        return out

    def substitute(self, mapping):
        return VectorFieldExpr([substitute(c, mapping) for c in self], self.coords)

    # calculus ---------------------------------------------------------
    def jacobian(self):
        """Symbolic Jacobian as a tuple of row tuples."""
        if self._jac is None:
            self._jac = tuple(
                tuple(differentiate(comp, name) for name in self.coords)
                for comp in self.components
            )
        return self._jac

    # numerics ---------------------------------------------------------
    def tape(self, with_jacobian=False):
        """Compiled tape of the components (optionally followed by J row-major)."""
        from .tape import compile_tape

        if with_jacobian:
            if self._tape_jac is None:
                exprs = list(self.components) + [e for row in self.jacobian() for e in row]
                self._tape_jac = compile_tape(exprs, self.coords)
            return self._tape_jac
        if self._tape is None:
            self._tape = compile_tape(self.components, self.coords)
        return self._tape

    def __call__(self, point, t=0.0):
        return eval_vf(self, point, t)

    def jacobian_at(self, point, t=0.0):
        """Numeric Jacobian from the symbolic derivatives."""
        from .._backend import eval_checked

        out = eval_checked(self.tape(True), np.asarray(point, float), float(t))
        n = self.dim
        return out[n:].reshape(n, n)

    def evaluate_lazy(self, point, t=0.0):
        """Tree-walking evaluation; raises DomainError on the first bad node."""
        env = dict(zip(self.coords, np.asarray(point, float).tolist()))
        env[TIME] = float(t)
        return np.array([evaluate(c, env) for c in self.components])

    def evaluate_many(self, points, times):
        """Evaluate at rows of ``points`` (shape ``(N, dim)``) and ``times``."""
        from .._backend import eval_many_checked

        points = np.atleast_2d(np.asarray(points, float))
        times = np.broadcast_to(np.asarray(times, float), (points.shape[0],)).copy()
        return eval_many_checked(self.tape(), points, times)

    def jacobian_many(self, points, times):
        from .._backend import eval_many_checked

        points = np.atleast_2d(np.asarray(points, float))
        times = np.broadcast_to(np.asarray(times, float), (points.shape[0],)).copy()
        out = eval_many_checked(self.tape(True), points, times)
        n = self.dim
        return out[:, n:].reshape(-1, n, n)


def eval_vf(v: VectorFieldExpr, point, time=0.0):
    """Evaluate ``v`` at ``point`` and ``time``.

    Raises
    ------
    DimensionError
        If ``len(point) != v.dim``.
    DomainError
        If a component leaves its domain; the error names the offending node.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.shape[0] != v.dim:
        raise DimensionError(f"point has {point.shape[0]} entries, field has dim {v.dim}")
    from .._backend import eval_checked

    return eval_checked(v.tape(), point, float(time))
