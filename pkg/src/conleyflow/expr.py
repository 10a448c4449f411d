"""Plain-text vector field expressions.

One arithmetic expression per component, in variables ``x1..xn`` and
``lambda``. Supported: ``+ - * / ^``, parentheses, numeric literals and the
functions ``sin cos exp sqrt``. Lines starting with ``#`` are ignored.

The text is parsed once with :mod:`ast` into a small evaluation tree; nothing
is ever passed to ``eval``.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_FUNCS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
}
_BINOPS: dict[type, Callable] = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    kind: str  # "const", "var", "param", "neg", "bin", "call"
    value: object = None
    children: tuple["Node", ...] = ()

    def evaluate(self, xs: Sequence, lam):
        if self.kind == "const":
            return self.value
        if self.kind == "var":
            return xs[self.value]
        if self.kind == "param":
            return lam
        if self.kind == "neg":
            return -self.children[0].evaluate(xs, lam)
        if self.kind == "bin":
            a = self.children[0].evaluate(xs, lam)
            b = self.children[1].evaluate(xs, lam)
            return self.value(a, b)
        if self.kind == "call":
            return self.value(self.children[0].evaluate(xs, lam))
        raise AssertionError(self.kind)


def _convert(node: ast.AST, dim: int) -> Node:
    if isinstance(node, ast.Expression):
        return _convert(node.body, dim)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return Node("const", float(node.value))
    if isinstance(node, ast.Name):
        if node.id == "lambda_":
            return Node("param")
        m = re.fullmatch(r"x([1-9][0-9]*)", node.id)
        if m and int(m.group(1)) <= dim:
            return Node("var", int(m.group(1)) - 1)
        raise ExpressionError(f"unknown variable {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _convert(node.operand, dim)
        return Node("neg", children=(inner,)) if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return Node(
            "bin",
            _BINOPS[type(node.op)],
            (_convert(node.left, dim), _convert(node.right, dim)),
        )
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in _FUNCS or len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"unsupported function call {node.func.id!r}")
        return Node("call", _FUNCS[node.func.id], (_convert(node.args[0], dim),))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def parse_expression(text: str, dim: int) -> Node:
    src = text.strip()
    if not src:
        raise ExpressionError("empty expression")
    if "**" in src:
        raise ExpressionError("use ^ for powers")
    src = src.replace("^", "**")
    # `lambda` is a Python keyword; rename before handing to ast
    src = re.sub(r"\blambda\b", "lambda_", src)
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    return _convert(tree, dim)


def parse_system(text: str) -> list[Node]:
    """Parse a whole file body: one component expression per non-comment line."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ExpressionError("no component expressions found")
    return [parse_expression(ln, len(lines)) for ln in lines]
