"""Symbol expressions for config files.

Grammar: numbers and complex literals (2, 1.5e-3, 3j, i), the names xi1..xi3, abs2 (= |xi|^2) and pi,
the operators + - * / ^, parentheses, and matrices written as rows in brackets: [[a, b], [c, d]].
"""
from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np

_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


class ExprError(ValueError):
    def __init__(self, msg: str, col: int | None = None):
        super().__init__(msg if col is None else f"{msg} (column {col})")
        self.col = col


@dataclass(frozen=True)
class SymbolExpr:
    text: str
    shape: tuple[int, int]
    tree: ast.AST
    max_dim: int

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        """Evaluate at frequencies xi of shape (d, K); returns (K, rows, cols)."""
        if xi.shape[0] < self.max_dim:
            raise ExprError(f"expression uses xi{self.max_dim} but the grid has dimension {xi.shape[0]}")
        env = {"abs2": np.sum(xi ** 2, axis=0), "i": 1j, "pi": np.pi}
        for j in range(xi.shape[0]):
            env[f"xi{j + 1}"] = xi[j]
        K = xi.shape[1]
        body = self.tree.body
        rows = body.elts if isinstance(body, ast.List) else [ast.List(elts=[body])]
        out = np.empty((K,) + self.shape, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            for r, row in enumerate(rows):
                for c, entry in enumerate(row.elts):
                    out[:, r, c] = np.broadcast_to(_eval(entry, env), (K,))
        return out


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    raise ExprError(f"unsupported element {type(node).__name__}")


def _check_scalar(node, names: set[str]) -> None:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float, complex)):
            raise ExprError("only numeric literals are allowed", node.col_offset + 1)
    elif isinstance(node, ast.Name):
        ok = node.id in ("abs2", "i", "pi") or node.id in ("xi1", "xi2", "xi3")
        if not ok:
            raise ExprError(f"unknown name {node.id!r}", node.col_offset + 1)
        names.add(node.id)
    elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check_scalar(node.left, names)
        _check_scalar(node.right, names)
    elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        _check_scalar(node.operand, names)
    else:
        raise ExprError(f"unsupported syntax {type(node).__name__}", getattr(node, "col_offset", 0) + 1)


def parse_symbol(text: str) -> SymbolExpr:
    """Parse and validate a symbol expression; '^' means power."""
    src = str(text).replace("^", "**")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse {text!r}: {exc.msg}", exc.offset) from None
    names: set[str] = set()
    body = tree.body
    if isinstance(body, ast.List):
        if not body.elts or not all(isinstance(r, ast.List) for r in body.elts):
            raise ExprError("a matrix must be a bracketed list of bracketed rows", body.col_offset + 1)
        widths = {len(r.elts) for r in body.elts}
        if len(widths) != 1 or 0 in widths:
            raise ExprError("matrix rows must be nonempty and of equal length", body.col_offset + 1)
        for row in body.elts:
            for entry in row.elts:
                _check_scalar(entry, names)
        shape = (len(body.elts), widths.pop())
    else:
        _check_scalar(body, names)
        shape = (1, 1)
    dims = [int(n[2]) for n in names if n.startswith("xi")]
    return SymbolExpr(str(text), shape, tree, max(dims, default=0))
