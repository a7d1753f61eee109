"""Evaluate model terms against household data frames.

A term is ``"1"`` (intercept), a column name, or an arithmetic expression over
columns using numpy functions, e.g. ``"cos(x1_s + x1_r)"`` or ``"x2**2"``.
"""

from __future__ import annotations

import ast
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError

_FUNCS = {
    name: getattr(np, name)
    for name in ("cos", "sin", "tan", "exp", "log", "log1p", "expm1", "sqrt", "abs", "tanh", "arctan")
}
_FUNCS["pi"] = np.pi

_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def _compile(term: str):
    tree = ast.parse(term, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise SchemaError(f"unsupported syntax in term {term!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise SchemaError(f"unknown function in term {term!r}")
    return compile(tree, "<term>", "eval"), {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}


def term_columns(term: str) -> set[str]:
    """Column names a term refers to."""
    term = str(term).strip()
    if term == "1":
        return set()
    return _compile(term)[1] - set(_FUNCS)


def evaluate_terms(frame: pd.DataFrame, terms: Sequence[str]) -> np.ndarray:
    """(n, len(terms)) matrix of evaluated terms."""
    n = len(frame)
    cols = []
    for term in terms:
        term = str(term).strip()
        if term == "1":
            cols.append(np.ones(n))
            continue
        if term in frame.columns:
            cols.append(frame[term].to_numpy(dtype=float))
            continue
        code, names = _compile(term)
        missing = sorted(names - set(_FUNCS) - set(frame.columns))
        if missing:
            raise SchemaError(f"term {term!r} references unknown columns {missing}")
        env = {k: frame[k].to_numpy(dtype=float) for k in names if k in frame.columns}
        with np.errstate(all="ignore"):
            val = np.broadcast_to(np.asarray(eval(code, {"__builtins__": {}, **_FUNCS}, env), dtype=float), (n,))
        if not np.all(np.isfinite(val)):
            raise SchemaError(f"term {term!r} produced non-finite values")
        cols.append(np.array(val))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def role_frame(data: pd.DataFrame, role: str) -> pd.DataFrame:
    """Per-member view: ``x1_s`` becomes ``x1`` for role ``s``; unsuffixed columns are kept."""
    if role not in ("s", "r"):
        raise ValueError("role must be 's' or 'r'")
    other = "r" if role == "s" else "s"
    out = {}
    for col in data.columns:
        if col.endswith(f"_{role}"):
            out[col[:-2]] = data[col]
        elif not col.endswith(f"_{other}") and col not in out:
            out[col] = data[col]
    return pd.DataFrame(out, index=data.index)


def require_columns(data: pd.DataFrame, cols: Sequence[str]) -> None:
    missing = [c for c in cols if c not in data.columns]
    if missing:
        raise SchemaError(f"data is missing required columns {missing}")
