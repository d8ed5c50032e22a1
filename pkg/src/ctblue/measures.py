"""Signed vector measures: atoms plus a closed-form density.

A :class:`MeasureFamily` holds the components ``zeta_0, ..., zeta_q`` that
pair a linear estimator with the observed path and its derivatives.  This
module evaluates the pairings that define the information matrix ``C`` and
the left-hand side of the optimality equation, rewrites densities on
derivative components into atoms by integration by parts, and adds
solutions for different drifts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .drift import DriftVector
from .errors import (
    DegenerateModelError,
    DomainError,
    UnsupportedError,
    ValidationError,
)
from .kernels import Kernel
from .quadrature import integrate

EPSABS = 1e-12
EPSREL = 1e-12
# finite-difference derivatives carry noise well above the exact tolerances
APPROX_EPS = 1e-6
MERGE_TOL = 1e-12


# --------------------------------------------------------------------------
# densities


class Density:
    """Closed-form ``R^m``-valued density ``z(t)``.

    Calling a density with an array of shape ``(n,)`` returns ``(n, m)``.
    """

    m: int
    approximate: bool = False

    def __call__(self, t) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def derivative(self, order: int) -> "Density":
        raise UnsupportedError(f"{type(self).__name__} has no analytic derivatives")

    def to_json(self) -> dict:
        raise UnsupportedError(f"{type(self).__name__} cannot be serialised")

    def transformed(self, M) -> "Density":
        """Density ``M z(t)`` for a matrix ``M`` with ``m`` columns."""
        return CombinedDensity(((np.asarray(M, dtype=float), self),))

    def scaled(self, factor: float) -> "Density":
        return self.transformed(factor * np.eye(self.m))

    def __add__(self, other: "Density") -> "Density":
        return CombinedDensity(_parts(self) + _parts(other))


def _parts(d: Density):
    if isinstance(d, CombinedDensity):
        return d.parts
    return ((np.eye(d.m), d),)


class DriftDensity(Density):
    """``z(t) = sum_k c_k f^{(k)}(t)`` for a drift ``f``."""

    def __init__(self, drift: DriftVector, coeffs: dict[int, float]):
        self.drift = drift
        self.coeffs = {int(k): float(v) for k, v in coeffs.items() if v != 0.0}
        self.m = drift.m
        self.approximate = drift.approximate

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t.shape + (self.m,))
        for k, c in self.coeffs.items():
            out += c * self.drift(t, k)
        return out

    def derivative(self, order: int) -> "DriftDensity":
        return DriftDensity(self.drift, {k + order: c for k, c in self.coeffs.items()})

    def to_json(self) -> dict:
        expr = " + ".join(f"{c!r}*f^({k})" for k, c in sorted(self.coeffs.items())) or "0"
        return {"kind": "closed-form", "expr": expr}


_TERM = re.compile(r"^\s*([-+0-9.eEinfa]+)\*f\^\((\d+)\)\s*$")


def _parse_drift_density(expr: str, drift: DriftVector) -> DriftDensity:
    coeffs: dict[int, float] = {}
    if expr.strip() != "0":
        for part in expr.split(" + "):
            m = _TERM.match(part)
            if not m:
                raise ValidationError(f"malformed density expression {expr!r}")
            coeffs[int(m.group(2))] = coeffs.get(int(m.group(2)), 0.0) + float(m.group(1))
    return DriftDensity(drift, coeffs)


class MarkovDensity(Density):
    """Density ``-(1/v) (h'/q')'`` with ``h = f/v`` and ``q = u/v``.

    Expanded: with ``W = u'v - uv'``,
    ``z = -[(f''v - f v'')W - (f'v - f v')(u''v - u v'')] / (v W^2)``.
    """

    def __init__(self, u, v, drift: DriftVector):
        self.u, self.v, self.drift = u, v, drift
        self.m = drift.m
        self.approximate = drift.approximate

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u0, u1, u2 = (self.u.value(t, k)[:, None] for k in range(3))
        v0, v1, v2 = (self.v.value(t, k)[:, None] for k in range(3))
        f0, f1, f2 = (self.drift(t, k) for k in range(3))
        W = u1 * v0 - u0 * v1
        num = (f2 * v0 - f0 * v2) * W - (f1 * v0 - f0 * v1) * (u2 * v0 - u0 * v2)
        return -num / (v0 * W ** 2)

    def to_json(self) -> dict:
        return {"kind": "closed-form", "expr": "markov-product"}


class CallableDensity(Density):
    """Density given by a vectorised callable returning ``(n, m)`` values."""

    def __init__(self, fn: Callable, m: int, tag: str = "callable"):
        self.fn = fn
        self.m = int(m)
        self.tag = tag

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self.fn(t), dtype=float).reshape(t.shape + (self.m,))

    def to_json(self) -> dict:
        return {"kind": "closed-form", "expr": self.tag}


class CombinedDensity(Density):
    """``sum_k M_k z_k(t)`` for matrices ``M_k`` and densities ``z_k``."""

    def __init__(self, parts):
        parts = tuple((np.atleast_2d(np.asarray(M, dtype=float)), d) for M, d in parts)
        if not parts:
            raise ValidationError("empty density combination")
        self.m = parts[0][0].shape[0]
        for M, d in parts:
            if M.shape != (self.m, d.m):
                raise ValidationError("density combination has inconsistent shapes")
        self.parts = parts
        self.approximate = any(d.approximate for _, d in parts)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t.shape + (self.m,))
        for M, d in self.parts:
            out += d(t) @ M.T
        return out

    def transformed(self, M) -> "Density":
        M = np.asarray(M, dtype=float)
        return CombinedDensity(tuple((M @ A, d) for A, d in self.parts))

    def derivative(self, order: int) -> "Density":
        return CombinedDensity(tuple((M, d.derivative(order)) for M, d in self.parts))

    def to_json(self) -> dict:
        return {
            "kind": "closed-form",
            "expr": "combination",
            "parts": [{"matrix": M.tolist(), "density": d.to_json()} for M, d in self.parts],
        }


# --------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class Atom:
    t: float
    w: np.ndarray


class SignedVectorMeasure:
    """Atoms ``(t_k, w_k)`` plus an optional density on ``[A, B]``.

    Atoms closer than ``1e-12 (B - A)`` are merged by adding weights.
    """

    def __init__(self, atoms: Iterable, density: Density | None, interval, m: int):
        a, b = (float(x) for x in interval)
        self.interval = (a, b)
        self.m = int(m)
        tol = MERGE_TOL * (b - a)
        merged: list[list] = []
        for item in sorted(((float(t), np.asarray(w, dtype=float).reshape(self.m))
                            for t, w in (x if isinstance(x, tuple) else (x.t, x.w) for x in atoms)),
                           key=lambda p: p[0]):
            t, w = item
            if t < a - tol or t > b + tol:
                raise DomainError(f"atom at {t} outside [{a}, {b}]")
            t = min(max(t, a), b)
            if merged and abs(t - merged[-1][0]) <= tol:
                merged[-1][1] = merged[-1][1] + w
            else:
                merged.append([t, w.copy()])
        self.atoms: tuple[Atom, ...] = tuple(Atom(t, w) for t, w in merged)
        if density is not None and density.m != self.m:
            raise ValidationError("density dimension differs from atom dimension")
        self.density = density

    @classmethod
    def zero(cls, interval, m: int) -> "SignedVectorMeasure":
        return cls((), None, interval, m)

    @property
    def locations(self) -> np.ndarray:
        return np.array([a.t for a in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.w for a in self.atoms]).reshape(len(self.atoms), self.m)

    def is_zero(self) -> bool:
        return self.density is None and all(not np.any(a.w) for a in self.atoms)

    def transformed(self, M) -> "SignedVectorMeasure":
        """Measure ``M zeta`` (weights and density multiplied by ``M``)."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        atoms = [(a.t, M @ a.w) for a in self.atoms]
        dens = None if self.density is None else self.density.transformed(M)
        return SignedVectorMeasure(atoms, dens, self.interval, M.shape[0])

    def scaled(self, factor: float) -> "SignedVectorMeasure":
        return self.transformed(factor * np.eye(self.m))

    def __add__(self, other: "SignedVectorMeasure") -> "SignedVectorMeasure":
        _same_frame(self, other)
        atoms = [(a.t, a.w) for a in self.atoms] + [(a.t, a.w) for a in other.atoms]
        if self.density is None:
            dens = other.density
        elif other.density is None:
            dens = self.density
        else:
            dens = self.density + other.density
        return SignedVectorMeasure(atoms, dens, self.interval, self.m)

    def without_density(self) -> "SignedVectorMeasure":
        return SignedVectorMeasure([(a.t, a.w) for a in self.atoms], None, self.interval, self.m)

    def with_density(self, density: Density | None) -> "SignedVectorMeasure":
        return SignedVectorMeasure([(a.t, a.w) for a in self.atoms], density, self.interval, self.m)

    def atom_weight(self, t: float) -> np.ndarray:
        tol = MERGE_TOL * (self.interval[1] - self.interval[0])
        for a in self.atoms:
            if abs(a.t - t) <= tol:
                return a.w
        return np.zeros(self.m)


def _same_frame(x, y):
    if x.m != y.m or not np.allclose(x.interval, y.interval, rtol=0, atol=1e-14):
        raise ValidationError("measures live on different intervals or dimensions")


class MeasureFamily:
    """Components ``zeta_0, ..., zeta_q`` sharing ``m`` and the interval."""

    def __init__(self, components: Sequence[SignedVectorMeasure]):
        comps = tuple(components)
        if not comps:
            raise ValidationError("a measure family needs at least one component")
        for c in comps[1:]:
            _same_frame(comps[0], c)
        self.components = comps

    @classmethod
    def zero(cls, q: int, interval, m: int) -> "MeasureFamily":
        return cls([SignedVectorMeasure.zero(interval, m) for _ in range(q + 1)])

    @property
    def q(self) -> int:
        return len(self.components) - 1

    @property
    def m(self) -> int:
        return self.components[0].m

    @property
    def interval(self) -> tuple[float, float]:
        return self.components[0].interval

    def __getitem__(self, i: int) -> SignedVectorMeasure:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def transformed(self, M) -> "MeasureFamily":
        return MeasureFamily([c.transformed(M) for c in self.components])

    def scaled(self, factor: float) -> "MeasureFamily":
        return MeasureFamily([c.scaled(factor) for c in self.components])

    def padded(self, q: int) -> "MeasureFamily":
        """Family with zero components appended up to order ``q``."""
        extra = [SignedVectorMeasure.zero(self.interval, self.m) for _ in range(q - self.q)]
        return MeasureFamily(list(self.components) + extra)

    def __add__(self, other: "MeasureFamily") -> "MeasureFamily":
        q = max(self.q, other.q)
        a, b = self.padded(q), other.padded(q)
        return MeasureFamily([x + y for x, y in zip(a, b)])

    def __neg__(self) -> "MeasureFamily":
        return self.scaled(-1.0)


# --------------------------------------------------------------------------
# pairings


def _eps(approximate: bool) -> tuple[float, float]:
    return (APPROX_EPS, APPROX_EPS) if approximate else (EPSABS, EPSREL)


def pair_integral(measure: SignedVectorMeasure, g: Callable, approximate: bool = False) -> np.ndarray:
    """``int g(t) zeta(dt)^T`` for a vector function ``g`` of shape ``(n, p)``.

    Returns a ``p x m`` matrix. ``approximate`` loosens the quadrature
    tolerance when ``g`` relies on numerical derivatives.
    """
    a, b = measure.interval
    probe = np.asarray(g(np.array([a])), dtype=float)
    p = probe.shape[-1]
    out = np.zeros((p, measure.m))
    if measure.atoms:
        locs = measure.locations
        G = np.asarray(g(locs), dtype=float).reshape(len(locs), p)
        out += G.T @ measure.weights
    if measure.density is not None:
        dens = measure.density

        def integrand(t):
            return np.asarray(g(t), dtype=float)[:, :, None] * dens(t)[:, None, :]

        ea, er = _eps(approximate or dens.approximate)
        val, _ = integrate(integrand, a, b, epsabs=ea, epsrel=er)
        out += val
    return out


def c_matrix(family: MeasureFamily, drift: DriftVector) -> np.ndarray:
    """Information matrix ``C = sum_i int zeta_i(dt) f^{(i)}(t)^T``."""
    if drift.max_order < family.q:
        raise ValidationError("drift max_order is below the family order")
    if drift.m != family.m:
        raise ValidationError("drift and measure dimensions differ")
    C = np.zeros((family.m, family.m))
    for i, comp in enumerate(family):
        C += pair_integral(comp, lambda t, i=i: drift(t, i), drift.approximate).T
    return C


@dataclass(frozen=True)
class ConditionReport:
    asymmetry: float
    condition: float


def c_diagnostics(C: np.ndarray) -> ConditionReport:
    """Relative asymmetry and condition number of the symmetrised ``C``."""
    C = np.asarray(C, dtype=float)
    norm = np.linalg.norm(C)
    asym = float(np.linalg.norm(C - C.T) / norm) if norm > 0 else 0.0
    with np.errstate(divide="ignore"):
        cond = float(np.linalg.cond(0.5 * (C + C.T)))
    return ConditionReport(asym, cond if np.isfinite(cond) else math.inf)


def apply_kernel(family: MeasureFamily, kernel: Kernel, s) -> np.ndarray:
    """``sum_i int K^{(i)}(t, s) zeta_i(dt)`` at ``s`` (scalar or 1-d array).

    Atoms on the diagonal ``t = s`` take the average of the two one-sided
    values of ``K^{(i)}``; for ``i <= 2q`` both sides agree.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    a, b = family.interval
    out = np.zeros((s_arr.size, family.m))
    for i, comp in enumerate(family):
        if comp.atoms:
            locs = comp.locations
            K = np.asarray(kernel.partial_t(i, locs[None, :], s_arr[:, None]))
            out += K.reshape(s_arr.size, locs.size) @ comp.weights
        if comp.density is not None:
            dens = comp.density
            ea, er = _eps(dens.approximate)
            for n, sv in enumerate(s_arr):
                def integrand(t, sv=sv, i=i):
                    k = np.asarray(kernel.partial_t(i, t, sv))
                    return k[:, None] * dens(t)

                val, _ = integrate(integrand, a, b, breaks=[sv], epsabs=ea, epsrel=er)
                out[n] += val
    return out[0] if np.ndim(s) == 0 else out


def variance_of(family: MeasureFamily, kernel: Kernel) -> np.ndarray:
    """Covariance ``int int zeta(dt) K zeta(ds)^T`` of the unnormalised estimator.

    Evaluated as ``sum_j int phi_j(s) zeta_j(ds)^T`` with
    ``phi_j(s) = sum_i int d^i_t d^j_s K(t, s) zeta_i(dt)``, using only mixed
    partials of order at most ``q`` in each argument.
    """
    a, b = family.interval

    def phi(j):
        def fn(s_vals):
            s_vals = np.atleast_1d(s_vals)
            res = np.zeros((s_vals.size, family.m))
            for i, comp in enumerate(family):
                if comp.atoms:
                    locs = comp.locations
                    K = np.asarray(kernel.cross(i, j, locs[None, :], s_vals[:, None]))
                    res += K.reshape(s_vals.size, locs.size) @ comp.weights
                if comp.density is not None:
                    dens = comp.density
                    ea, er = _eps(dens.approximate)
                    for n, sv in enumerate(s_vals):
                        def integrand(t, sv=sv, i=i):
                            k = np.asarray(kernel.cross(i, j, t, sv))
                            return k[:, None] * dens(t)
                        val, _ = integrate(integrand, a, b, breaks=[sv],
                                           epsabs=ea, epsrel=er)
                        res[n] += val
            return res
        return fn

    approx = any(c.density is not None and c.density.approximate for c in family)
    V = np.zeros((family.m, family.m))
    for j, comp in enumerate(family):
        V += pair_integral(comp, phi(j), approx)
    return 0.5 * (V + V.T)


# --------------------------------------------------------------------------
# canonicalisation and combination


def _phi_derivative(phi, order: int):
    if isinstance(phi, DriftVector):
        return lambda t: phi(np.atleast_1d(np.asarray(t, dtype=float)), order)
    if isinstance(phi, Density):
        d = phi.derivative(order) if order else phi
        return d
    raise UnsupportedError("the density must be a DriftVector or a Density with derivatives")


def canonicalize(family: MeasureFamily, i: int, phi) -> MeasureFamily:
    """Move the density ``phi`` of component ``i`` into component 0.

    Integration by parts,
    ``int y^{(i)} phi = sum_{k=1}^{i} (-1)^{k-1} [y^{(i-k)} phi^{(k-1)}]_A^B
    + (-1)^i int y phi^{(i)}``,
    turns the density into a density ``(-1)^i phi^{(i)}`` on component 0
    plus boundary atoms on components ``0..i-1``.  The resulting estimator
    has the same mean and covariance.

    Parameters
    ----------
    family : MeasureFamily
    i : int
        Component whose density is removed, ``1 <= i <= q``.
    phi : DriftVector or Density
        The density of component ``i``, with analytic derivatives.
    """
    if not 1 <= i <= family.q:
        raise ValidationError(f"order {i} must lie in 1..{family.q}")
    comp = family[i]
    a, b = family.interval
    dphi = {k: _phi_derivative(phi, k) for k in range(i + 1)}
    grid = np.linspace(a, b, 33)
    target = dphi[0](grid)
    current = comp.density(grid) if comp.density is not None else np.zeros_like(target)
    scale = max(1.0, float(np.max(np.abs(target))))
    if np.max(np.abs(current - target)) > 1e-10 * scale:
        raise ValidationError(f"component {i} does not carry the supplied density")
    if not np.any(target) and comp.density is None:
        return family

    at_a = {k: np.asarray(dphi[k](np.array([a])), dtype=float).reshape(family.m) for k in range(i)}
    at_b = {k: np.asarray(dphi[k](np.array([b])), dtype=float).reshape(family.m) for k in range(i)}
    new = list(family.components)
    new[i] = comp.without_density()
    for k in range(1, i + 1):
        j = i - k
        sign = (-1.0) ** (k - 1)
        extra = SignedVectorMeasure(
            [(b, sign * at_b[k - 1]), (a, -sign * at_a[k - 1])], None, (a, b), family.m)
        new[j] = new[j] + extra
    top = dphi[i]
    top_density = top if isinstance(top, Density) else CallableDensity(top, family.m, "derivative")
    pushed = SignedVectorMeasure((), top_density.scaled((-1.0) ** i), (a, b), family.m)
    new[0] = new[0] + pushed
    return MeasureFamily(new)


@dataclass(frozen=True)
class CombinedSolution:
    """Sum of two solutions and its information matrices.

    ``C`` is the information matrix of the summed family for the drift
    ``f + g``, computed directly.  ``cross`` holds the pairing of the
    ``g`` solution with ``f``, one of the two mixed terms in ``C``.
    """

    family: MeasureFamily
    C: np.ndarray
    C_f: np.ndarray
    C_g: np.ndarray
    cross: np.ndarray


def combine_solutions(zeta: MeasureFamily, eta: MeasureFamily,
                      f: DriftVector, g: DriftVector) -> CombinedSolution:
    """Solution for drift ``f + g`` from solutions for ``f`` and for ``g``.

    The measures add.  The information matrix of the sum contains the
    pairings of ``f`` with ``eta`` (and of ``g`` with ``zeta``) besides
    ``C_f + C_g``; these mixed terms vanish only when ``int f eta^T`` is
    antisymmetric, so they are included.
    """
    if f.m != g.m or zeta.m != eta.m or zeta.m != f.m:
        raise ValidationError("dimensions of the two solutions differ")
    total = zeta + eta
    q = total.q
    eta_p = eta.padded(q)
    C_f = c_matrix(zeta, f)
    C_g = c_matrix(eta, g)
    cross = np.zeros_like(C_f)
    for i in range(q + 1):
        if i <= f.max_order:
            cross += pair_integral(eta_p[i], lambda t, i=i: f(t, i))
    C = np.zeros_like(C_f)
    for i in range(q + 1):
        C += pair_integral(total[i], lambda t, i=i: f(t, i) + g(t, i)).T
    if np.linalg.matrix_rank(0.5 * (C + C.T)) < C.shape[0]:
        raise DegenerateModelError("combined information matrix is singular")
    return CombinedSolution(total, C, C_f, C_g, cross)


# --------------------------------------------------------------------------
# serialisation


def density_to_json(d: Density | None):
    return None if d is None else d.to_json()


def density_from_json(obj, drift: DriftVector, kernel: Kernel | None = None,
                      resolver: Callable[[str], Density] | None = None) -> Density | None:
    """Rebuild a density from its tag; kernel-dependent tags need ``kernel``."""
    if obj is None:
        return None
    if obj.get("kind") != "closed-form":
        raise ValidationError(f"unknown density kind {obj.get('kind')!r}")
    expr = obj.get("expr", "")
    if expr == "combination":
        parts = [(np.asarray(p["matrix"], dtype=float),
                  density_from_json(p["density"], drift, kernel, resolver))
                 for p in obj["parts"]]
        return CombinedDensity(parts)
    if expr == "markov-product":
        if kernel is None or not hasattr(kernel, "u"):
            raise ValidationError("markov-product density needs a product kernel")
        return MarkovDensity(kernel.u, kernel.v, drift)
    if "f^(" in expr or expr.strip() == "0":
        return _parse_drift_density(expr, drift)
    if resolver is not None:
        return resolver(expr)
    raise ValidationError(f"cannot rebuild density {expr!r}")


def family_to_json(family: MeasureFamily) -> dict:
    return {
        "q": family.q,
        "m": family.m,
        "interval": list(family.interval),
        "components": [
            {
                "atoms": [{"t": a.t, "w": a.w.tolist()} for a in comp.atoms],
                "density": density_to_json(comp.density),
            }
            for comp in family
        ],
    }


def family_from_json(obj: dict, drift: DriftVector, kernel: Kernel | None = None,
                     resolver=None) -> MeasureFamily:
    try:
        q, m = int(obj["q"]), int(obj["m"])
        interval = tuple(float(x) for x in obj["interval"])
        comps_json = obj["components"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed measure family: {exc}") from None
    if len(comps_json) != q + 1:
        raise ValidationError("component count does not match q")
    comps = []
    for c in comps_json:
        atoms = [(float(a["t"]), np.asarray(a["w"], dtype=float)) for a in c.get("atoms", [])]
        dens = density_from_json(c.get("density"), drift, kernel, resolver)
        comps.append(SignedVectorMeasure(atoms, dens, interval, m))
    return MeasureFamily(comps)
