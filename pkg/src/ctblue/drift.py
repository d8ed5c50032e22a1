"""Regression function vectors with exact derivatives.

A drift element is a finite linear combination of primitives ``t**k``,
``sin(w t)``, ``cos(w t)`` and ``exp(r t)``.  The class is closed under
differentiation, so every derivative is evaluated from a closed form.
Arbitrary callables are also accepted; their derivatives come from
Richardson-extrapolated central differences and are flagged approximate.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    UnsupportedError,
    UnsupportedOrderError,
    ValidationError,
)

MAX_ORDER = 6
INDEPENDENCE_COND_LIMIT = 1e12

_KINDS = ("pow", "sin", "cos", "exp")


@dataclass(frozen=True, order=True)
class Primitive:
    """One basis primitive: ``t**p``, ``sin(p t)``, ``cos(p t)`` or ``exp(p t)``."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown primitive kind {self.kind!r}")
        if self.kind == "pow" and float(self.param) != int(self.param):
            raise ValidationError("only integer powers of t are supported")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        p = self.param
        if self.kind == "pow":
            k = int(p)
            if k == 0:
                return np.ones_like(t)
            return t ** k if k > 0 else 1.0 / t ** (-k)
        if self.kind == "sin":
            return np.sin(p * t)
        if self.kind == "cos":
            return np.cos(p * t)
        return np.exp(p * t)

    def text(self) -> str:
        p = self.param
        if self.kind == "pow":
            k = int(p)
            if k == 0:
                return "1"
            if k == 1:
                return "t"
            return f"t^{k}" if k > 0 else f"1/t^{-k}"
        return f"{self.kind}({p!r}*t)"


def _primitive(kind: str, param: float) -> list[tuple[float, Primitive]]:
    """Build a normalised primitive; degenerate frequencies collapse to constants."""
    if kind in ("sin", "cos", "exp") and param == 0.0:
        return [] if kind == "sin" else [(1.0, Primitive("pow", 0))]
    if kind == "pow":
        return [(1.0, Primitive("pow", int(param)))]
    return [(1.0, Primitive(kind, float(param)))]


def _collect(terms: Iterable[tuple[float, Primitive]]) -> tuple[tuple[float, Primitive], ...]:
    acc: dict[Primitive, float] = {}
    for c, p in terms:
        acc[p] = acc.get(p, 0.0) + float(c)
    return tuple((c, p) for p, c in sorted(acc.items()) if c != 0.0)


class Element:
    """Common interface of scalar drift elements."""

    approximate = False

    def value(self, t: np.ndarray, order: int = 0) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def text(self) -> str:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class AnalyticElement(Element):
    """Linear combination of primitives with closed-form derivatives."""

    terms: tuple[tuple[float, Primitive], ...]
    source: str | None = field(default=None, compare=False)

    @classmethod
    def from_terms(cls, terms, source=None) -> "AnalyticElement":
        return cls(_collect(terms), source)

    def derivative(self, order: int = 1) -> "AnalyticElement":
        return _derivative(self.terms, order)

    def antiderivative(self, origin: float) -> "AnalyticElement":
        """The antiderivative vanishing at ``origin``."""
        out: list[tuple[float, Primitive]] = []
        for c, p in self.terms:
            if p.kind == "pow":
                k = int(p.param)
                if k == -1:
                    raise UnsupportedError("the antiderivative of 1/t leaves the primitive class")
                out.append((c / (k + 1), Primitive("pow", k + 1)))
            elif p.kind == "sin":
                out.append((-c / p.param, Primitive("cos", p.param)))
            elif p.kind == "cos":
                out.append((c / p.param, Primitive("sin", p.param)))
            else:
                out.append((c / p.param, Primitive("exp", p.param)))
        anti = AnalyticElement.from_terms(out)
        offset = float(anti.value(np.array([float(origin)]))[0])
        return AnalyticElement.from_terms(out + [(-offset, Primitive("pow", 0))])

    def value(self, t: np.ndarray, order: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        terms = self.terms if order == 0 else _derivative(self.terms, order).terms
        out = np.zeros_like(t)
        for c, p in terms:
            out = out + c * p(t)
        return out

    def min_power(self) -> int:
        pows = [int(p.param) for _, p in self.terms if p.kind == "pow"]
        return min(pows) if pows else 0

    def text(self) -> str:
        if self.source is not None:
            return self.source
        if not self.terms:
            return "0"
        return " + ".join(f"{c!r}*{p.text()}" for c, p in self.terms)

    def scaled(self, factor: float) -> "AnalyticElement":
        return AnalyticElement.from_terms((factor * c, p) for c, p in self.terms)


@lru_cache(maxsize=4096)
def _derivative(terms: tuple[tuple[float, Primitive], ...], order: int) -> AnalyticElement:
    cur = list(terms)
    for _ in range(order):
        nxt: list[tuple[float, Primitive]] = []
        for c, p in cur:
            if p.kind == "pow":
                k = int(p.param)
                if k != 0:
                    nxt.append((c * k, Primitive("pow", k - 1)))
            elif p.kind == "sin":
                nxt.append((c * p.param, Primitive("cos", p.param)))
            elif p.kind == "cos":
                nxt.append((-c * p.param, Primitive("sin", p.param)))
            else:
                nxt.append((c * p.param, Primitive("exp", p.param)))
        cur = list(_collect(nxt))
    return AnalyticElement(tuple(cur))


class CallableElement(Element):
    """A user-supplied scalar function.

    Parameters
    ----------
    fn : callable
        Vectorised function of ``t``.
    derivatives : sequence of callables, optional
        Exact derivatives ``fn', fn'', ...``.  Orders not covered are
        obtained by Richardson-extrapolated central differences, in which
        case the element is flagged approximate.
    scale : float
        Length scale used for the difference step (usually ``B - A``).
    name : str
        Label used in textual output.
    """

    def __init__(self, fn: Callable, derivatives: Sequence[Callable] = (),
                 scale: float = 1.0, name: str = "callable"):
        self.fn = fn
        self.derivatives = tuple(derivatives)
        self.scale = float(scale)
        self.name = name

    @property
    def approximate(self) -> bool:  # type: ignore[override]
        return len(self.derivatives) < MAX_ORDER

    def value(self, t: np.ndarray, order: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if order == 0:
            return np.asarray(self.fn(t), dtype=float) * np.ones_like(t)
        if order <= len(self.derivatives):
            return np.asarray(self.derivatives[order - 1](t), dtype=float) * np.ones_like(t)
        return richardson_derivative(self.fn, t, order, self.scale)

    def text(self) -> str:
        return self.name


def _central(fn, t, order, h):
    acc = np.zeros_like(t)
    for k in range(order + 1):
        acc = acc + (-1) ** k * math.comb(order, k) * fn(t + (order / 2 - k) * h)
    return acc / h ** order


def richardson_derivative(fn: Callable, t: np.ndarray, order: int, scale: float = 1.0) -> np.ndarray:
    """Order-``order`` derivative by one Richardson step on central differences.

    The step ``scale * eps**(1/(order+4))`` balances the fourth-order
    truncation error of the extrapolated stencil against rounding.
    """
    t = np.asarray(t, dtype=float)
    h = scale * np.finfo(float).eps ** (1.0 / (order + 4))
    coarse = _central(fn, t, order, h)
    fine = _central(fn, t, order, h / 2)
    return (4.0 * fine - coarse) / 3.0


class DriftVector:
    """The vector ``f = (f_1, ..., f_m)`` of regression functions.

    Parameters
    ----------
    elements : sequence
        Drift elements; strings are parsed with :func:`parse_element`.
    interval : (float, float)
        Interval ``[A, B]`` on which the drift is used.
    max_order : int
        Highest derivative order that may be requested.
    """

    def __init__(self, elements: Sequence, interval: tuple[float, float],
                 max_order: int = MAX_ORDER):
        elems = []
        for e in elements:
            if isinstance(e, str):
                e = parse_element(e)
            if not isinstance(e, Element):
                raise ValidationError(f"not a drift element: {e!r}")
            elems.append(e)
        if not elems:
            raise ValidationError("a drift needs at least one element")
        a, b = (float(x) for x in interval)
        if not a < b:
            raise ValidationError(f"interval must satisfy A < B, got [{a}, {b}]")
        if max_order > MAX_ORDER:
            raise ValidationError(f"max_order is limited to {MAX_ORDER}")
        for e in elems:
            if isinstance(e, AnalyticElement) and e.min_power() < 0 and a <= 0:
                raise DomainError("negative powers of t require A > 0")
        self.elements: tuple[Element, ...] = tuple(elems)
        self.interval = (a, b)
        self.max_order = int(max_order)

    @property
    def m(self) -> int:
        return len(self.elements)

    @property
    def approximate(self) -> bool:
        return any(e.approximate for e in self.elements)

    @property
    def spec(self) -> str:
        return ",".join(e.text() for e in self.elements)

    def __repr__(self) -> str:
        return f"DriftVector({self.spec!r}, interval={self.interval})"

    def __call__(self, t, order: int = 0) -> np.ndarray:
        """Evaluate ``f^{(order)}(t)``; result has shape ``t.shape + (m,)``."""
        if order < 0 or order > self.max_order:
            raise UnsupportedOrderError(
                f"derivative order {order} exceeds max_order {self.max_order}")
        t = np.asarray(t, dtype=float)
        return np.stack([e.value(t, order) for e in self.elements], axis=-1)

    def with_interval(self, interval) -> "DriftVector":
        return DriftVector(self.elements, interval, self.max_order)

    def _analytic(self) -> tuple[AnalyticElement, ...]:
        if not all(isinstance(e, AnalyticElement) for e in self.elements):
            raise UnsupportedError("operation requires closed-form drift elements")
        return self.elements  # type: ignore[return-value]

    def derivative(self, order: int = 1) -> "DriftVector":
        return DriftVector([e.derivative(order) for e in self._analytic()], self.interval)

    def antiderivative(self, origin: float, interval=None) -> "DriftVector":
        """Drift ``t -> int_origin^t f``; defined on ``interval`` (default: own)."""
        return DriftVector([e.antiderivative(origin) for e in self._analytic()],
                           interval or self.interval)

    def __add__(self, other: "DriftVector") -> "DriftVector":
        if other.m != self.m:
            raise ValidationError("drift dimensions differ")
        a, b = self._analytic(), other._analytic()
        return DriftVector(
            [AnalyticElement.from_terms(x.terms + y.terms) for x, y in zip(a, b)],
            self.interval)

    def transform(self, L: np.ndarray) -> "DriftVector":
        """Drift ``L f`` for a matrix ``L`` with ``m`` columns."""
        L = np.asarray(L, dtype=float)
        if L.ndim != 2 or L.shape[1] != self.m:
            raise ValidationError("L must have m columns")
        elems = self._analytic()
        rows = []
        for row in L:
            terms = [(w * c, p) for w, e in zip(row, elems) for c, p in e.terms]
            rows.append(AnalyticElement.from_terms(terms))
        return DriftVector(rows, self.interval)


def eval_drift(drift: DriftVector, i: int, t) -> np.ndarray:
    """Exact ``i``-th derivative of the drift at ``t``."""
    a, b = drift.interval
    tt = np.asarray(t, dtype=float)
    if np.any(tt < a - 1e-12 * (b - a)) or np.any(tt > b + 1e-12 * (b - a)):
        raise DomainError(f"t outside the drift interval [{a}, {b}]")
    return drift(tt, i)


@dataclass(frozen=True)
class IndependenceReport:
    independent: bool
    condition: float


def check_linear_independence(drift: DriftVector, points: int = 64) -> IndependenceReport:
    """Condition number test of the Gram matrix on an equidistant grid."""
    a, b = drift.interval
    X = drift(np.linspace(a, b, points))
    gram = X.T @ X
    with np.errstate(divide="ignore"):
        cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond):
        cond = math.inf
    return IndependenceReport(cond < INDEPENDENCE_COND_LIMIT, cond)


# --------------------------------------------------------------------------
# parsing

_CONSTANTS = {"pi": math.pi, "e": math.e}


class _Parser:
    """Turn a Python AST over ``t`` into a linear combination of primitives."""

    def __init__(self, text: str):
        self.text = text

    def fail(self, msg: str):
        raise ValidationError(f"cannot parse drift element {self.text!r}: {msg}")

    def const(self, node) -> float | None:
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            return _CONSTANTS.get(node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = self.const(node.operand)
            if v is None:
                return None
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            l, r = self.const(node.left), self.const(node.right)
            if l is None or r is None:
                return None
            ops = {ast.Add: lambda: l + r, ast.Sub: lambda: l - r,
                   ast.Mult: lambda: l * r, ast.Div: lambda: l / r,
                   ast.Pow: lambda: l ** r}
            op = ops.get(type(node.op))
            if op is None:
                self.fail("unsupported operator")
            return float(op())
        if isinstance(node, ast.Call):
            if any(isinstance(a, ast.Name) and a.id == "t" for a in ast.walk(node)):
                return None
            args = [self.const(a) for a in node.args]
            fn = {"sin": math.sin, "cos": math.cos, "exp": math.exp}.get(
                getattr(node.func, "id", None))
            if fn is None or len(args) != 1 or args[0] is None:
                self.fail("unsupported function call")
            return fn(args[0])
        return None

    def lin(self, node) -> list[tuple[float, Primitive]]:
        c = self.const(node)
        if c is not None:
            return [(c, Primitive("pow", 0))]
        if isinstance(node, ast.Name):
            if node.id == "t":
                return [(1.0, Primitive("pow", 1))]
            self.fail(f"unknown name {node.id!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            s = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return [(s * c, p) for c, p in self.lin(node.operand)]
        if isinstance(node, ast.BinOp):
            return self.binop(node)
        if isinstance(node, ast.Call):
            return self.call(node)
        self.fail("unsupported syntax")
        return []  # pragma: no cover

    def binop(self, node: ast.BinOp):
        if isinstance(node.op, ast.Add):
            return self.lin(node.left) + self.lin(node.right)
        if isinstance(node.op, ast.Sub):
            return self.lin(node.left) + [(-c, p) for c, p in self.lin(node.right)]
        if isinstance(node.op, ast.Mult):
            cl, cr = self.const(node.left), self.const(node.right)
            if cl is not None:
                return [(cl * c, p) for c, p in self.lin(node.right)]
            if cr is not None:
                return [(cr * c, p) for c, p in self.lin(node.left)]
            return self.product(self.lin(node.left), self.lin(node.right))
        if isinstance(node.op, ast.Div):
            cr = self.const(node.right)
            if cr is not None:
                return [(c / cr, p) for c, p in self.lin(node.left)]
            den = _collect(self.lin(node.right))
            if len(den) != 1 or den[0][1].kind != "pow":
                self.fail("division is only supported by constants or monomials")
            dc, dp = den[0]
            inv = [(1.0 / dc, Primitive("pow", -int(dp.param)))]
            return self.product(self.lin(node.left), inv)
        if isinstance(node.op, ast.Pow):
            expo = self.const(node.right)
            if isinstance(node.left, ast.Name) and node.left.id == "e":
                arg = _collect(self.lin(node.right))
                return self.apply("exp", arg)
            if expo is None or float(expo) != int(expo):
                self.fail("exponents must be integer constants")
            base = _collect(self.lin(node.left))
            if len(base) != 1 or base[0][1].kind != "pow":
                self.fail("only monomials may be raised to a power")
            bc, bp = base[0]
            k = int(expo)
            return [(bc ** k, Primitive("pow", int(bp.param) * k))]
        self.fail("unsupported operator")
        return []  # pragma: no cover

    def product(self, left, right):
        out = []
        for c1, p1 in left:
            for c2, p2 in right:
                if p1.kind == "pow" and p2.kind == "pow":
                    out.append((c1 * c2, Primitive("pow", int(p1.param) + int(p2.param))))
                elif p1.kind == "pow" and int(p1.param) == 0:
                    out.append((c1 * c2, p2))
                elif p2.kind == "pow" and int(p2.param) == 0:
                    out.append((c1 * c2, p1))
                elif p1.kind == "exp" and p2.kind == "exp":
                    out += [(c1 * c2 * c, p) for c, p in _primitive("exp", p1.param + p2.param)]
                else:
                    self.fail("products of non-constant primitives are not supported")
        return out

    def call(self, node: ast.Call):
        name = getattr(node.func, "id", None)
        if name not in ("sin", "cos", "exp") or len(node.args) != 1:
            self.fail("only sin, cos and exp of one argument are supported")
        arg = _collect(self.lin(node.args[0]))
        return self.apply(name, arg)

    def apply(self, name: str, arg):
        slope, offset = 0.0, 0.0
        for c, p in arg:
            if p == Primitive("pow", 1):
                slope = c
            elif p == Primitive("pow", 0):
                offset = c
            else:
                self.fail(f"the argument of {name} must be linear in t")
        if name == "exp":
            return [(math.exp(offset) * c, p) for c, p in _primitive("exp", slope)]
        s, co = _primitive("sin", slope), _primitive("cos", slope)
        if name == "sin":
            return ([(math.cos(offset) * c, p) for c, p in s]
                    + [(math.sin(offset) * c, p) for c, p in co])
        return ([(math.cos(offset) * c, p) for c, p in co]
                + [(-math.sin(offset) * c, p) for c, p in s])


def parse_element(text: str) -> AnalyticElement:
    """Parse one drift expression such as ``"1/t^2"`` or ``"sin(3*pi*t)"``."""
    src = text.strip()
    if not src:
        raise ValidationError("empty drift element")
    try:
        tree = ast.parse(src.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse drift element {text!r}: {exc.msg}") from None
    terms = _Parser(src).lin(tree.body)
    return AnalyticElement.from_terms(terms, source=src)


def _split_top_level(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_drift(text: str, interval: tuple[float, float], max_order: int = MAX_ORDER) -> DriftVector:
    """Parse a comma-separated drift specification, e.g. ``"1,t,t^2"``."""
    return DriftVector([parse_element(p) for p in _split_top_level(text)], interval, max_order)
