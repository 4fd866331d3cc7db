"""Whitelisted expression trees for problem documents.

An expression is a number, a variable reference ["x", i] or ["p", i]
(0-based), or an operator list:

    ["add", e1, e2, ...]   ["sub", a, b]      ["mul", e1, e2, ...]
    ["neg", e]             ["pow", e, k]      (k a nonnegative integer)
    ["poly", [c0, c1, ...], e]                (c0 + c1 e + c2 e^2 + ...)
    ["sin", e]  ["cos", e]  ["abs", e]  ["max", e1, e2, ...]

Values evaluate elementwise, so variables may be numpy arrays (batch
evaluation). Gradients are forward-mode and exact for the whitelist; abs and
max use the one-sided derivative of the first active branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ValidationError
from .setmaps import Smooth

OPERATORS = ("add", "sub", "mul", "neg", "pow", "poly", "sin", "cos", "abs", "max")
VARIABLES = ("x", "p")


@dataclass(frozen=True)
class Expr:
    """Validated expression with evaluation and gradients in x and p."""

    tree: Any
    dim_x: int
    dim_p: int = 0

    def __post_init__(self):
        validate(self.tree, self.dim_x, self.dim_p)

    def __call__(self, x, p=None):
        return _value(self.tree, x, p)

    def grad_x(self, x, p=None) -> np.ndarray:
        return _forward(self.tree, np.asarray(x, float), None if p is None else np.asarray(p, float), "x")[1]

    def grad_p(self, x, p) -> np.ndarray:
        return _forward(self.tree, np.asarray(x, float), np.asarray(p, float), "p")[1]


def validate(tree, dim_x: int, dim_p: int = 0, key: str = "expr") -> None:
    """Raise ValidationError naming the offending sub-expression path."""
    if isinstance(tree, bool):
        raise ValidationError("booleans are not expressions", key)
    if isinstance(tree, (int, float)):
        if not np.isfinite(tree):
            raise ValidationError("numbers must be finite", key)
        return
    if not isinstance(tree, list) or not tree or not isinstance(tree[0], str):
        raise ValidationError(f"expected a number or [operator, ...], got {tree!r}", key)
    head, args = tree[0], tree[1:]
    if head in VARIABLES:
        if len(args) != 1 or not isinstance(args[0], int) or isinstance(args[0], bool):
            raise ValidationError(f"variable reference must be [{head!r}, index]", key)
        limit = dim_x if head == "x" else dim_p
        if not 0 <= args[0] < limit:
            raise ValidationError(f"index {args[0]} out of range for {head} of dimension {limit}", key)
        return
    if head not in OPERATORS:
        raise ValidationError(f"operator {head!r} is not in the whitelist {OPERATORS}", key)
    arity = {"sub": 2, "neg": 1, "pow": 2, "poly": 2, "sin": 1, "cos": 1, "abs": 1}
    if head in arity and len(args) != arity[head]:
        raise ValidationError(f"{head} takes {arity[head]} arguments", key)
    if head in ("add", "mul", "max") and len(args) < 1:
        raise ValidationError(f"{head} needs at least one argument", key)
    if head == "pow":
        k = args[1]
        if isinstance(k, bool) or not isinstance(k, (int, float)) or k < 0 or int(k) != k:
            raise ValidationError("pow exponent must be a nonnegative integer", key)
        validate(args[0], dim_x, dim_p, f"{key}[1]")
        return
    if head == "poly":
        coeffs = args[0]
        if not isinstance(coeffs, list) or not coeffs or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) and np.isfinite(c) for c in coeffs
        ):
            raise ValidationError("poly coefficients must be a nonempty list of finite numbers", key)
        validate(args[1], dim_x, dim_p, f"{key}[2]")
        return
    for i, a in enumerate(args):
        validate(a, dim_x, dim_p, f"{key}[{i + 1}]")


def _value(tree, x, p):
    if isinstance(tree, (int, float)):
        return float(tree)
    head, args = tree[0], tree[1:]
    if head == "x":
        return x[args[0]]
    if head == "p":
        return p[args[0]]
    if head == "pow":
        return _value(args[0], x, p) ** int(args[1])
    if head == "poly":
        e = _value(args[1], x, p)
        out = 0.0
        for c in reversed(args[0]):
            out = out * e + c
        return out
    vals = [_value(a, x, p) for a in args]
    if head == "add":
        return sum(vals[1:], vals[0])
    if head == "sub":
        return vals[0] - vals[1]
    if head == "mul":
        out = vals[0]
        for v in vals[1:]:
            out = out * v
        return out
    if head == "neg":
        return -vals[0]
    if head == "sin":
        return np.sin(vals[0])
    if head == "cos":
        return np.cos(vals[0])
    if head == "abs":
        return np.abs(vals[0])
    if head == "max":
        out = vals[0]
        for v in vals[1:]:
            out = np.maximum(out, v)
        return out
    raise ValidationError(f"unknown operator {head!r}")


def _forward(tree, x, p, wrt: str):
    """(value, gradient) with respect to x or p, for scalar point arguments."""
    n = x.size if wrt == "x" else p.size
    if isinstance(tree, (int, float)):
        return float(tree), np.zeros(n)
    head, args = tree[0], tree[1:]
    if head in VARIABLES:
        i = args[0]
        d = np.zeros(n)
        if head == wrt:
            d[i] = 1.0
        return float((x if head == "x" else p)[i]), d
    if head == "pow":
        v, d = _forward(args[0], x, p, wrt)
        k = int(args[1])
        return v**k, (k * v ** (k - 1) * d if k > 0 else np.zeros(n))
    if head == "poly":
        v, d = _forward(args[1], x, p, wrt)
        coeffs = args[0]
        val = 0.0
        for c in reversed(coeffs):
            val = val * v + c
        der = 0.0
        for k in range(len(coeffs) - 1, 0, -1):
            der = der * v + k * coeffs[k]
        return val, der * d
    parts = [_forward(a, x, p, wrt) for a in args]
    if head == "add":
        return sum(v for v, _ in parts), sum((d for _, d in parts), np.zeros(n))
    if head == "sub":
        return parts[0][0] - parts[1][0], parts[0][1] - parts[1][1]
    if head == "mul":
        val, der = parts[0]
        for v, d in parts[1:]:
            val, der = val * v, der * v + val * d
        return val, der
    v, d = parts[0]
    if head == "neg":
        return -v, -d
    if head == "sin":
        return float(np.sin(v)), np.cos(v) * d
    if head == "cos":
        return float(np.cos(v)), -np.sin(v) * d
    if head == "abs":
        return abs(v), float(np.sign(v)) * d
    if head == "max":
        best = max(range(len(parts)), key=lambda i: (parts[i][0], -i))
        return parts[best]
    raise ValidationError(f"unknown operator {head!r}")


class VectorExpr:
    """Vector of expressions; value and Jacobians stack the components."""

    def __init__(self, components, dim_x: int, dim_p: int = 0):
        if not isinstance(components, list) or not components:
            raise ValidationError("components must be a nonempty list of expressions", "components")
        self.exprs = [Expr(c, dim_x, dim_p) for c in components]
        self.dim_x, self.dim_p = dim_x, dim_p

    @property
    def dim_out(self) -> int:
        return len(self.exprs)

    def __call__(self, x, p=None):
        vals = [e(x, p) for e in self.exprs]
        shape = np.broadcast(*[np.asarray(v) for v in vals]).shape
        return np.array([np.broadcast_to(v, shape) for v in vals], dtype=float)

    def jac_x(self, x, p=None) -> np.ndarray:
        return np.array([e.grad_x(x, p) for e in self.exprs]).reshape(self.dim_out, self.dim_x)

    def jac_p(self, x, p) -> np.ndarray:
        return np.array([e.grad_p(x, p) for e in self.exprs]).reshape(self.dim_out, self.dim_p)


# ---------------------------------------------------------------------------
# builtin maps


def half_complex_square() -> Smooth:
    """x -> (x1^2 - x2^2, 2 x1 x2) / 2, i.e. z -> z^2 / 2 on the complex plane."""

    def f(x):
        return 0.5 * np.array([x[0] ** 2 - x[1] ** 2, 2 * x[0] * x[1]])

    def jac(x):
        return np.array([[x[0], -x[1]], [x[1], x[0]]])

    def preimages(t):
        w = np.sqrt(2 * complex(t[0], t[1]))
        root = np.array([w.real, w.imag])
        return [root, -root] if w != 0 else [root]

    return Smooth(f, 2, 2, jac=jac, preimages=preimages, name="half_complex_square")


BUILTIN_MAPS = {"half_complex_square": half_complex_square}
