"""Tiny expression language for user-supplied coefficients.

Expressions are Python-syntax arithmetic strings parsed with :mod:`ast`
and compiled into closures that evaluate on numpy arrays, e.g.::

    "u*v*(0.5 + pi/2 + arctan(x - y + mean(m)))"

Scalar variables: ``x, y, u, v``. Measure variables: ``m`` (and ``ml``,
``mk`` for cross-population kernels), usable only as the argument of a
measure functional ``mean(.)`` or ``int_abs(.)``.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ExpressionError", "Expression", "parse_expression"]


class ExpressionError(ValueError):
    """Malformed or disallowed expression tree."""


_FUNCS = {
    "arctan": np.arctan,
    "exp": np.exp,
    "tanh": np.tanh,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "log": np.log,
}
_FUNCTIONALS = {
    "mean": lambda m: m.mean,
    "int_abs": lambda m: m.abs_mean,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
SCALAR_VARS = frozenset({"x", "y", "u", "v"})
MEASURE_VARS = frozenset({"m", "ml", "mk"})


@dataclass(frozen=True)
class Expression:
    source: str
    variables: frozenset = field(default_factory=frozenset)
    _fn: object = field(default=None, repr=False, compare=False)

    def __call__(self, **env):
        return self._fn(env)

    @property
    def is_constant(self) -> bool:
        return not self.variables


def _compile(node, used: set):
    if isinstance(node, ast.Expression):
        return _compile(node.body, used)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")
        val = float(node.value)
        return lambda env: val
    if isinstance(node, ast.Name):
        if node.id in _CONSTANTS:
            val = _CONSTANTS[node.id]
            return lambda env: val
        if node.id in SCALAR_VARS:
            used.add(node.id)
            name = node.id
            return lambda env: env[name]
        if node.id in MEASURE_VARS:
            raise ExpressionError(f"measure '{node.id}' may only appear inside mean() or int_abs()")
        raise ExpressionError(f"unknown variable '{node.id}'")
    if isinstance(node, ast.BinOp):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
        lhs, rhs = _compile(node.left, used), _compile(node.right, used)
        return lambda env: op(lhs(env), rhs(env))
    if isinstance(node, ast.UnaryOp):
        inner = _compile(node.operand, used)
        if isinstance(node.op, ast.USub):
            return lambda env: -inner(env)
        if isinstance(node.op, ast.UAdd):
            return inner
        raise ExpressionError(f"unsupported unary operator {type(node.op).__name__}")
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords or len(node.args) != 1:
            raise ExpressionError("calls must be f(arg) with a single positional argument")
        fname = node.func.id
        arg = node.args[0]
        if fname in _FUNCTIONALS:
            if not isinstance(arg, ast.Name) or arg.id not in MEASURE_VARS:
                raise ExpressionError(f"{fname}() takes a measure variable (m, ml or mk)")
            used.add(arg.id)
            functional, mname = _FUNCTIONALS[fname], arg.id
            return lambda env: functional(env[mname])
        if fname in _FUNCS:
            fn, inner = _FUNCS[fname], _compile(arg, used)
            return lambda env: fn(inner(env))
        raise ExpressionError(f"unknown function '{fname}'")
    raise ExpressionError(f"unsupported syntax {type(node).__name__}")


def parse_expression(source, allowed=None) -> Expression:
    """Compile ``source`` (a string or a bare number) into an :class:`Expression`.

    ``allowed`` restricts the variables the expression may reference.
    """
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        source = repr(float(source))
    if not isinstance(source, str) or not source.strip():
        raise ExpressionError(f"expression must be a non-empty string, got {source!r}")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
    used: set = set()
    fn = _compile(tree, used)
    if allowed is not None:
        extra = used - set(allowed)
        if extra:
            raise ExpressionError(f"expression {source!r} uses disallowed variables {sorted(extra)}")
    return Expression(source=source, variables=frozenset(used), _fn=fn)
