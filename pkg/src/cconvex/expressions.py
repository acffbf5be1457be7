"""Restricted arithmetic grammar for user-supplied costs.

An expression is written in terms of the vector variables ``x`` and ``xbar``
with the operations +, -, *, /, ** and the functions exp, log, sqrt, norm,
inner.  It must evaluate to a scalar.  The same compiled closure runs on
plain floats (finite-difference path) and on Dual scalars (exact path), so
one definition feeds both derivative engines.

Example: ``"norm(x - xbar) ** -2"``.
"""

from __future__ import annotations

import ast

from .dualnum import dexp, dlog, dsqrt
from .errors import BadConfig

_ALLOWED_CALLS = {"exp", "log", "sqrt", "norm", "inner"}
_ALLOWED_NAMES = {"x", "xbar"} | _ALLOWED_CALLS

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp, ast.UnaryOp,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
    ast.UAdd, ast.USub,
    ast.Call, ast.Name, ast.Load, ast.Constant,
)


class Vec:
    """Fixed-length vector of scalar-like entries (floats or Duals)."""

    __slots__ = ("items",)

    def __init__(self, items):
        self.items = list(items)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __add__(self, other):
        if not isinstance(other, Vec):
            raise BadConfig("vector addition requires two vectors")
        return Vec(a + b for a, b in zip(self.items, other.items, strict=True))

    def __sub__(self, other):
        if not isinstance(other, Vec):
            raise BadConfig("vector subtraction requires two vectors")
        return Vec(a - b for a, b in zip(self.items, other.items, strict=True))

    def __neg__(self):
        return Vec(-a for a in self.items)

    def __mul__(self, s):
        if isinstance(s, Vec):
            raise BadConfig("use inner(u, v) for vector products")
        return Vec(a * s for a in self.items)

    __rmul__ = __mul__

    def __truediv__(self, s):
        if isinstance(s, Vec):
            raise BadConfig("cannot divide by a vector")
        return Vec(a / s for a in self.items)


def _inner(u, v):
    if not (isinstance(u, Vec) and isinstance(v, Vec)):
        raise BadConfig("inner() takes two vectors")
    out = None
    for a, b in zip(u.items, v.items, strict=True):
        term = a * b
        out = term if out is None else out + term
    return out


def _norm(v):
    if not isinstance(v, Vec):
        raise BadConfig("norm() takes a vector")
    return dsqrt(_inner(v, v))


def _exp(s):
    if isinstance(s, Vec):
        raise BadConfig("exp() takes a scalar")
    return dexp(s)


def _log(s):
    if isinstance(s, Vec):
        raise BadConfig("log() takes a scalar")
    return dlog(s)


def _sqrt(s):
    if isinstance(s, Vec):
        raise BadConfig("sqrt() takes a scalar")
    return dsqrt(s)


_ENV = {
    "exp": _exp, "log": _log, "sqrt": _sqrt,
    "norm": _norm, "inner": _inner,
    "__builtins__": {},
}


def validate_expression(source: str) -> ast.Expression:
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise BadConfig(f"cannot parse cost expression: {exc}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise BadConfig(
                f"disallowed construct {type(node).__name__!r} in cost expression")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise BadConfig(f"unknown name {node.id!r} in cost expression")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_CALLS:
                raise BadConfig("only exp/log/sqrt/norm/inner calls are allowed")
            if node.keywords:
                raise BadConfig("keyword arguments are not allowed")
            arity = 2 if node.func.id == "inner" else 1
            if len(node.args) != arity:
                raise BadConfig(f"{node.func.id}() takes {arity} argument(s)")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise BadConfig("only numeric constants are allowed")
    return tree


def compile_cost_expression(source: str):
    """Return f(x_items, xbar_items) -> scalar for a validated expression."""
    tree = validate_expression(source)
    code = compile(tree, "<cost-expression>", "eval")

    def evaluate(x_items, xbar_items):
        env = dict(_ENV)
        env["x"] = Vec(x_items)
        env["xbar"] = Vec(xbar_items)
        out = eval(code, env)  # noqa: S307 - AST is whitelisted above
        if isinstance(out, Vec):
            raise BadConfig("cost expression must evaluate to a scalar")
        return out

    evaluate.source = source
    return evaluate
