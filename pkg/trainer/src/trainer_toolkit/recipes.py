"""Restricted derived-feature recipe grammar.

A recipe is a single expression over dataset columns:

* column arithmetic: ``+ - * /`` with numeric constants,
* ``lag(base, years=k)``: the column of the same family ``k`` years before
  the target year (``lag(grbd, years=1)`` for a 2023 label reads
  ``grbd_2022``; a year-tagged first argument shifts its own tag),
* ``neighbor_sum(column, radius=r)``: per row, the sum of ``column`` over
  all rows (itself included) whose declared coordinates lie within
  Euclidean distance ``r``,
* ``threshold(column, value=v)``: 1.0 where the column exceeds ``v``.

Anything else is a parse error.  The grammar is deliberately tiny so that
a recipe is either implementable or rejected, never reinterpreted.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .request import ToolkitError

YEAR_RE = re.compile(r"^(.*)_(\d{4})$")


class RecipeError(ToolkitError):
    pass


class UnknownColumnError(ToolkitError):
    pass


@dataclass(frozen=True)
class RecipeContext:
    coordinates: tuple[str, str] | None = None
    target_year: int | None = None


_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
}


def _column(table: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    if name not in table:
        raise UnknownColumnError(f"column {name!r} not found")
    return table[name]


def _lag_column_name(base: str, years: int, ctx: RecipeContext) -> str:
    m = YEAR_RE.match(base)
    if m:
        return f"{m.group(1)}_{int(m.group(2)) - years}"
    if ctx.target_year is None:
        raise RecipeError(f"lag({base!r}) needs a year-tagged label to resolve against")
    return f"{base}_{ctx.target_year - years}"


def _keyword(call: ast.Call, name: str, default=None):
    for kw in call.keywords:
        if kw.arg == name:
            if not isinstance(kw.value, ast.Constant) or not isinstance(
                kw.value.value, (int, float)
            ):
                raise RecipeError(f"{name} must be a numeric constant")
            return kw.value.value
    if default is None:
        raise RecipeError(f"missing keyword {name}")
    return default


def _call(node: ast.Call, table: Mapping[str, np.ndarray], ctx: RecipeContext) -> np.ndarray:
    if not isinstance(node.func, ast.Name):
        raise RecipeError("only plain function names are allowed")
    fn = node.func.id
    if len(node.args) != 1 or not isinstance(node.args[0], ast.Name):
        raise RecipeError(f"{fn}() takes one column name argument")
    arg = node.args[0].id

    if fn == "lag":
        years = int(_keyword(node, "years", 1))
        return _column(table, _lag_column_name(arg, years, ctx))
    if fn == "neighbor_sum":
        radius = float(_keyword(node, "radius"))
        if ctx.coordinates is None:
            raise RecipeError("neighbor_sum needs a declared coordinate pair")
        values = np.nan_to_num(_column(table, arg))
        x = _column(table, ctx.coordinates[0])
        y = _column(table, ctx.coordinates[1])
        dx = x[:, None] - x[None, :]
        dy = y[:, None] - y[None, :]
        within = (dx * dx + dy * dy) <= radius * radius
        return within @ values
    if fn == "threshold":
        value = float(_keyword(node, "value"))
        return (_column(table, arg) > value).astype(float)
    raise RecipeError(f"unknown function {fn!r}")


def _eval(node: ast.AST, table: Mapping[str, np.ndarray], ctx: RecipeContext) -> np.ndarray:
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left, table, ctx), _eval(node.right, table, ctx))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _eval(node.operand, table, ctx)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        raise RecipeError(f"unsupported constant {node.value!r}")
    if isinstance(node, ast.Name):
        return _column(table, node.id)
    if isinstance(node, ast.Call):
        return _call(node, table, ctx)
    raise RecipeError(f"unsupported recipe syntax: {type(node).__name__}")


def derive_feature(
    recipe: str, table: Mapping[str, np.ndarray], ctx: RecipeContext = RecipeContext()
) -> np.ndarray:
    """Evaluate a recipe to a new column over the table."""
    try:
        tree = ast.parse(recipe, mode="eval")
    except SyntaxError as exc:
        raise RecipeError(f"cannot parse recipe {recipe!r}: {exc}") from exc
    result = _eval(tree.body, table, ctx)
    if np.isscalar(result) or getattr(result, "ndim", 1) == 0:
        raise RecipeError(f"recipe {recipe!r} does not reference any column")
    return np.asarray(result, dtype=float)
