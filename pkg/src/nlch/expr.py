"""Tiny arithmetic expression language used by config files.

Expressions are parsed with :mod:`ast` and only a whitelisted subset of
nodes is accepted, so untrusted configs cannot execute code.  Kernel
modulations use plain arithmetic over the coordinates ``x1, x2, y1, y2``
(``x``/``y`` alias the first coordinate); initial-data expressions may in
addition call a few elementary functions.
"""

from __future__ import annotations

import ast
import math
from typing import Callable, Mapping

import numpy as np

__all__ = ["ExpressionError", "compile_expression"]

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTANTS = {"pi": math.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _check(node: ast.AST, names: set[str], allow_functions: bool) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, names, allow_functions)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
        if isinstance(node.op, ast.Pow) and not allow_functions:
            raise ExpressionError("'**' not allowed in this expression")
        _check(node.left, names, allow_functions)
        _check(node.right, names, allow_functions)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.UAdd, ast.USub)):
            raise ExpressionError("only unary + and - are allowed")
        _check(node.operand, names, allow_functions)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ExpressionError(f"constant {node.value!r} is not a number")
    elif isinstance(node, ast.Name):
        if node.id not in names and not (allow_functions and node.id in _CONSTANTS):
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Call):
        if not allow_functions:
            raise ExpressionError("function calls not allowed in this expression")
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError("unknown function")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError("functions take exactly one argument")
        _check(node.args[0], names, allow_functions)
    else:
        raise ExpressionError(f"syntax {type(node).__name__} not allowed")


def _evaluate(node: ast.AST, env: Mapping[str, np.ndarray]):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _evaluate(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        return _CONSTANTS[node.id]
    if isinstance(node, ast.Call):
        return _FUNCTIONS[node.func.id](_evaluate(node.args[0], env))
    raise ExpressionError("unreachable")  # pragma: no cover


def compile_expression(
    text: str, names: list[str] | tuple[str, ...], allow_functions: bool = False
) -> Callable[..., np.ndarray]:
    """Compile ``text`` into a vectorized function of the given variable names.

    The returned callable takes the variables as keyword arguments (arrays of
    a common shape) and always returns an array of that shape.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    _check(tree, set(names), allow_functions)

    def fn(**env):
        shape = np.broadcast(*env.values()).shape if env else ()
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _evaluate(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    fn.source = text  # type: ignore[attr-defined]
    return fn
