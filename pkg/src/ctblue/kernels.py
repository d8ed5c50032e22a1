"""Covariance kernels with exact one-sided and cross partial derivatives.

Every kernel is described by its *lower branch* ``k(x, y)``, the closed form
of ``K(x, y)`` for ``x <= y``.  By symmetry ``K(t, s) = k(s, t)`` for
``t > s``, so all one-sided and mixed partial derivatives follow from the
mixed partials of ``k``.  At ``t == s`` the caller picks the branch with
:class:`Side`; without a side the two one-sided values are averaged.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Sequence

import numpy as np

from .drift import AnalyticElement, Element, parse_element
from .errors import (
    DomainError,
    InvalidKernelError,
    NumericalError,
    UnsupportedError,
    UnsupportedOrderError,
    ValidationError,
)

MAX_JITTER = 1e-8


class Side(Enum):
    """Direction of a one-sided limit ``t -> s``."""

    LEFT = "left"    # t -> s-, the t < s branch
    RIGHT = "right"  # t -> s+, the t > s branch


def _as_side(side) -> Side | None:
    if side is None or isinstance(side, Side):
        return side
    return Side(str(side).lower())


class Kernel:
    """Base class of all covariance kernels.

    Subclasses set ``family``, ``q`` (number of mean-square derivatives) and
    ``interval`` and implement :meth:`_branch`.
    """

    family = "kernel"
    q = 0
    interval: tuple[float, float] = (-math.inf, math.inf)

    @property
    def max_order(self) -> int:
        """Highest one-sided partial order in ``t`` that is available."""
        return 2 * self.q + 2

    @property
    def max_cross_order(self) -> int:
        return self.q

    def _branch(self, i: int, j: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``d^{i+j} k(x, y) / dx^i dy^j`` for ``x <= y``."""
        raise NotImplementedError

    def params(self) -> dict[str, float]:
        return {}

    @property
    def spec(self) -> str:
        p = self.params()
        if not p:
            return self.family
        return self.family + ":" + ",".join(f"{k}={v!r}" for k, v in p.items())

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.spec}>"

    def check_domain(self, *args) -> None:
        lo, hi = self.interval
        span = (hi - lo) if math.isfinite(hi - lo) else 1.0
        tol = 1e-12 * max(span, 1.0)
        for x in args:
            x = np.asarray(x, dtype=float)
            if lo > -math.inf and np.any(x < lo - tol):
                raise DomainError(f"{self.spec}: argument below {lo}")
            if hi < math.inf and np.any(x > hi + tol):
                raise DomainError(f"{self.spec}: argument above {hi}")

    def _piecewise(self, i, j, t, s, side):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        self.check_domain(t, s)
        tb, sb = np.broadcast_arrays(t, s)
        out = np.empty(tb.shape)
        lo = tb < sb
        hi = tb > sb
        eq = ~(lo | hi)
        if lo.any():
            out[lo] = self._branch(i, j, tb[lo], sb[lo])
        if hi.any():
            out[hi] = self._branch(j, i, sb[hi], tb[hi])
        if eq.any():
            left = self._branch(i, j, tb[eq], sb[eq])
            right = self._branch(j, i, sb[eq], tb[eq])
            if side is Side.LEFT:
                out[eq] = left
            elif side is Side.RIGHT:
                out[eq] = right
            else:
                out[eq] = 0.5 * (left + right)
        return out if out.ndim else float(out)

    def __call__(self, t, s):
        return self._piecewise(0, 0, t, s, None)

    def partial_t(self, i: int, t, s, side=None):
        """One-sided ``i``-th partial derivative in the first argument."""
        if i < 0 or i > self.max_order:
            raise UnsupportedOrderError(
                f"{self.spec}: partial order {i} exceeds {self.max_order}")
        return self._piecewise(i, 0, t, s, _as_side(side))

    def cross(self, i: int, j: int, t, s):
        """``d^{i+j} K / dt^i ds^j``; continuous for ``i, j <= q``."""
        if min(i, j) < 0 or max(i, j) > self.max_cross_order:
            raise UnsupportedOrderError(
                f"{self.spec}: cross order ({i},{j}) exceeds smoothness {self.q}")
        return self._piecewise(i, j, t, s, None)

    def reference_points(self) -> np.ndarray:
        lo, hi = self.interval
        if math.isfinite(lo) and math.isfinite(hi):
            return lo + (hi - lo) * np.array([0.25, 0.5, 0.75])
        if math.isfinite(lo):
            return lo + np.array([0.5, 1.0, 2.0])
        return np.array([0.0, 0.5, 1.5])


# --------------------------------------------------------------------------
# branch building blocks


class _PolynomialBranch:
    """Lower branch given by a bivariate polynomial ``sum c[a,b] x^a y^b``."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, i, j, x, y):
        c = self.coeffs
        if i >= c.shape[0] or j >= c.shape[1]:
            return np.zeros(np.broadcast(x, y).shape)
        if i:
            c = np.polynomial.polynomial.polyder(c, m=i, axis=0)
        if j:
            c = np.polynomial.polynomial.polyder(c, m=j, axis=1)
        return np.polynomial.polynomial.polyval2d(x, y, c)


class _ExpPolyProfile:
    """Stationary profile ``g(u) = Re sum_k c_k P_k(u) exp(-r_k u)`` for ``u >= 0``."""

    def __init__(self, terms):
        self.terms = [(complex(c), complex(r), np.asarray(p, dtype=float)) for c, r, p in terms]

    def derivative(self, n: int, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        acc = np.zeros(u.shape, dtype=complex)
        for c, r, p in self.terms:
            poly_sum = np.zeros(u.shape, dtype=complex)
            dp = p
            for k in range(n + 1):
                if dp.size == 0:
                    break
                poly_sum = poly_sum + math.comb(n, k) * (-r) ** (n - k) * np.polynomial.polynomial.polyval(u, dp)
                dp = np.polynomial.polynomial.polyder(dp) if dp.size > 1 else np.zeros(0)
            acc = acc + c * np.exp(-r * u) * poly_sum
        return acc.real


class StationaryKernel(Kernel):
    """``K(t, s) = g(|t - s|)`` with ``g`` a sum of exponential-polynomial terms."""

    profile: _ExpPolyProfile

    def _branch(self, i, j, x, y):
        return (-1.0) ** i * self.profile.derivative(i + j, y - x)

    @property
    def max_order(self) -> int:
        return 12

    def rho(self, u, order: int = 0):
        """Derivative of the profile ``g`` at ``u >= 0``."""
        return self.profile.derivative(order, np.asarray(u, dtype=float))


def _check_rates(*rates):
    for r in rates:
        if not (math.isfinite(r) and r > 0):
            raise InvalidKernelError(f"rates must be positive, got {r}")


def _distinct(a: float, b: float) -> bool:
    return abs(a - b) > 1e-6 * max(abs(a), abs(b))


class Exponential(StationaryKernel):
    """Ornstein--Uhlenbeck kernel ``exp(-lam |t - s|)``."""

    family = "ou"
    q = 0

    def __init__(self, lam: float):
        _check_rates(lam)
        self.lam = float(lam)
        self.profile = _ExpPolyProfile([(1.0, self.lam, [1.0])])
        # Markov factorisation K = u(min) v(max)
        self.u = AnalyticElement.from_terms([(1.0, _exp(self.lam))])
        self.v = AnalyticElement.from_terms([(1.0, _exp(-self.lam))])

    def params(self):
        return {"lambda": self.lam}


class ExpExp(StationaryKernel):
    """CAR(2) kernel with distinct real rates."""

    family = "expexp"
    q = 1

    def __init__(self, l1: float, l2: float):
        _check_rates(l1, l2)
        if not _distinct(l1, l2):
            raise InvalidKernelError("expexp needs distinct rates; use matern32 for equal rates")
        self.l1, self.l2 = float(l1), float(l2)
        d = self.l2 - self.l1
        self.profile = _ExpPolyProfile([
            (self.l2 / d, self.l1, [1.0]),
            (-self.l1 / d, self.l2, [1.0]),
        ])

    def params(self):
        return {"l1": self.l1, "l2": self.l2}


class ExpCos(StationaryKernel):
    """CAR(2) kernel with complex rates, ``e^{-lam u}(cos wu + lam/w sin wu)``."""

    family = "expcos"
    q = 1

    def __init__(self, lam: float, omega: float):
        _check_rates(lam, omega)
        self.lam, self.omega = float(lam), float(omega)
        self.profile = _ExpPolyProfile([
            (complex(1.0, -self.lam / self.omega), complex(self.lam, -self.omega), [1.0]),
        ])

    def params(self):
        return {"lambda": self.lam, "omega": self.omega}


class ExpLinear(StationaryKernel):
    """Matérn 3/2 kernel ``e^{-lam u}(1 + lam u)``."""

    family = "matern32"
    q = 1

    def __init__(self, lam: float):
        _check_rates(lam)
        self.lam = float(lam)
        self.profile = _ExpPolyProfile([(1.0, self.lam, [1.0, self.lam])])

    def params(self):
        return {"lambda": self.lam}


class Car3(StationaryKernel):
    """CAR(3) kernel, either three distinct rates or one triple rate.

    With distinct rates ``g(u) = sum_j c_j exp(-l_j u)`` where ``c_j`` is
    proportional to ``1 / (l_j prod_{k != j} (l_k^2 - l_j^2))``.  With a
    triple rate ``g(u) = e^{-l u}(1 + l u + l^2 u^2 / 3)``.
    """

    family = "car3"
    q = 2

    def __init__(self, l1: float, l2: float, l3: float):
        _check_rates(l1, l2, l3)
        lam = sorted(float(x) for x in (l1, l2, l3))
        self.rates = (float(l1), float(l2), float(l3))
        gaps = [_distinct(lam[0], lam[1]), _distinct(lam[1], lam[2])]
        if all(gaps):
            raw = []
            for j, lj in enumerate(self.rates):
                others = [lk for k, lk in enumerate(self.rates) if k != j]
                raw.append(1.0 / (lj * np.prod([lk ** 2 - lj ** 2 for lk in others])))
            total = sum(raw)
            self.weights = tuple(r / total for r in raw)
            self.equal = False
            self.profile = _ExpPolyProfile(
                [(c, lj, [1.0]) for c, lj in zip(self.weights, self.rates)])
        elif not any(gaps):
            self.equal = True
            self.weights = ()
            lam0 = float(np.mean(self.rates))
            self.rates = (lam0, lam0, lam0)
            self.profile = _ExpPolyProfile([(1.0, lam0, [1.0, lam0, lam0 ** 2 / 3.0])])
        else:
            raise UnsupportedError("CAR(3) with exactly two equal rates has no closed form here")

    def params(self):
        l1, l2, l3 = self.rates
        return {"l1": l1, "l2": l2, "l3": l3}


class Matern52(Car3):
    """Matérn 5/2 kernel with parameter ``lam``: triple-rate CAR(3) at rate ``sqrt(5) lam``."""

    family = "matern52"

    def __init__(self, lam: float):
        _check_rates(lam)
        self.lam = float(lam)
        r = math.sqrt(5.0) * self.lam
        super().__init__(r, r, r)

    def params(self):
        return {"lambda": self.lam}


class BrownianMotion(Kernel):
    """``min(t, s)`` on ``[0, inf)``."""

    family = "bm"
    q = 0
    interval = (0.0, math.inf)

    def __init__(self):
        self._poly = _PolynomialBranch([[0.0], [1.0]])
        self.u = parse_element("t")
        self.v = parse_element("1")

    def _branch(self, i, j, x, y):
        return self._poly(i, j, x, y)


class Product(Kernel):
    """Markov kernel ``u(min) v(max)`` on a given interval."""

    family = "product"
    q = 0

    def __init__(self, u: Element | str, v: Element | str, interval):
        self.u = parse_element(u) if isinstance(u, str) else u
        self.v = parse_element(v) if isinstance(v, str) else v
        a, b = (float(x) for x in interval)
        if not a < b:
            raise ValidationError("interval must satisfy A < B")
        self.interval = (a, b)

    def _branch(self, i, j, x, y):
        return self.u.value(x, i) * self.v.value(y, j)

    @property
    def spec(self) -> str:
        return f"product:u={self.u.text()},v={self.v.text()}"


class LinearDrift(Kernel):
    """``1 + l1 min(t,s) - l2 max(t,s)`` on ``[A, B]``.

    Validity requires ``l1 >= l2 >= 0`` and ``l2 (B - A) <= 1``; for
    ``l1 > l2`` the interval must also start at ``A >= 0``, where the kernel
    is a triangular kernel plus a scaled Brownian motion.
    """

    family = "lindrift"
    q = 0

    def __init__(self, l1: float, l2: float, interval):
        a, b = (float(x) for x in interval)
        if not a < b:
            raise ValidationError("interval must satisfy A < B")
        l1, l2 = float(l1), float(l2)
        if not (l1 >= l2 >= 0):
            raise InvalidKernelError("linear-drift kernel requires l1 >= l2 >= 0")
        if l2 * (b - a) > 1.0 + 1e-15:
            raise InvalidKernelError("linear-drift kernel requires l2 (B - A) <= 1")
        if l1 > l2 and a < 0:
            raise InvalidKernelError("linear-drift kernel with l1 > l2 requires A >= 0")
        self.l1, self.l2 = l1, l2
        self.interval = (a, b)
        self._poly = _PolynomialBranch([[1.0, -l2], [l1, 0.0]])

    def _branch(self, i, j, x, y):
        return self._poly(i, j, x, y)

    def params(self):
        return {"l1": self.l1, "l2": self.l2}


class Triangular(Kernel):
    """``max(1 - lam |t - s|, 0)``."""

    family = "triangular"
    q = 0

    def __init__(self, lam: float):
        _check_rates(lam)
        self.lam = float(lam)
        self._poly = _PolynomialBranch([[1.0, -self.lam], [self.lam, 0.0]])

    def _branch(self, i, j, x, y):
        val = self._poly(i, j, x, y)
        return np.where(y - x <= 1.0 / self.lam, val, 0.0)

    def params(self):
        return {"lambda": self.lam}


class IntegratedBM(Kernel):
    """Integrated Brownian motion started at origin ``a``.

    ``R(t, s) = s (t^2 - a^2)/2 - a^2 (t - a)/2 - (t^3 - a^3)/6`` for
    ``a <= t <= s``.
    """

    family = "ibm"
    q = 1

    def __init__(self, a: float = 0.0):
        a = float(a)
        if a < 0:
            raise DomainError("the origin of integrated Brownian motion must be >= 0")
        self.a = a
        self.interval = (a, math.inf)
        c = np.zeros((4, 3))
        c[0, 0] = 2.0 * a ** 3 / 3.0
        c[1, 0] = -a ** 2 / 2.0
        c[0, 1] = -a ** 2 / 2.0
        c[2, 1] = 0.5
        c[3, 0] = -1.0 / 6.0
        self._poly = _PolynomialBranch(c)

    def _branch(self, i, j, x, y):
        return self._poly(i, j, x, y)

    def params(self):
        return {"a": self.a}


class IntegratedTriangular(Kernel):
    """``ts - lam min (3 max^2 - 3ts + 2 min^2) / 6`` (triangular kernel integrated from 0)."""

    family = "itri"
    q = 1

    def __init__(self, lam: float, upper: float = math.inf):
        _check_rates(lam)
        self.lam = float(lam)
        self.interval = (0.0, float(upper))
        c = np.zeros((4, 3))
        c[1, 1] = 1.0
        c[1, 2] = -self.lam / 2.0
        c[2, 1] = self.lam / 2.0
        c[3, 0] = -self.lam / 3.0
        self._poly = _PolynomialBranch(c)

    def _branch(self, i, j, x, y):
        return self._poly(i, j, x, y)

    def params(self):
        return {"lambda": self.lam}


class TwiceIntegratedBM(Kernel):
    """``t^5/120 - s t^4/24 + s^2 t^3/12`` for ``0 <= t <= s``."""

    family = "tibm"
    q = 2
    interval = (0.0, math.inf)

    def __init__(self):
        c = np.zeros((6, 3))
        c[5, 0] = 1.0 / 120.0
        c[4, 1] = -1.0 / 24.0
        c[3, 2] = 1.0 / 12.0
        self._poly = _PolynomialBranch(c)

    def _branch(self, i, j, x, y):
        return self._poly(i, j, x, y)


class IntegratedOf(Kernel):
    """``R(t, s) = int_a^t int_a^s K(u, v) du dv`` by nested Gauss--Legendre rules.

    The square ``[a, min]^2`` is split along the diagonal, where the base
    kernel is not smooth, into two triangles that are equal by symmetry;
    each triangle and the remaining rectangle are integrated with tensor
    rules of ``nodes`` points per direction.
    """

    family = "integrated"

    def __init__(self, base: Kernel, a: float, nodes: int = 32):
        self.base = base
        self.a = float(a)
        base.check_domain(self.a)
        self.q = base.q + 1
        self.interval = (self.a, base.interval[1])
        self.nodes = int(nodes)
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        self._x, self._w = x, w

    @property
    def max_order(self) -> int:
        return 1

    @property
    def max_cross_order(self) -> int:
        return 1

    @property
    def spec(self) -> str:
        return f"integrated[{self.base.spec}]:a={self.a!r}"

    def _gl(self, lo, hi):
        h = 0.5 * (hi - lo)
        return 0.5 * (lo + hi) + h * self._x, h * self._w

    def _double(self, t, s):
        a = self.a
        lo, hi = min(t, s), max(t, s)
        if lo <= a:
            return 0.0
        u, wu = self._gl(a, lo)
        # triangle a <= v <= u <= lo
        hv = 0.5 * (u - a)
        v = 0.5 * (u + a)[:, None] + hv[:, None] * self._x[None, :]
        wv = hv[:, None] * self._w[None, :]
        tri = np.sum(wu[:, None] * wv * self.base(u[:, None] * np.ones_like(v), v))
        total = 2.0 * tri
        if hi > lo:
            vv, wvv = self._gl(lo, hi)
            total += np.sum(wu[:, None] * wvv[None, :] * self.base(u[:, None], vv[None, :]))
        return float(total)

    def _single(self, t, s):
        # int_a^s K(t, v) dv, split at v = t
        a = self.a
        if s <= a:
            return 0.0
        cuts = [a, s] if not a < t < s else [a, t, s]
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            v, w = self._gl(lo, hi)
            total += float(np.dot(w, self.base(np.full_like(v, t), v)))
        return total

    def _branch(self, i, j, x, y):
        x = np.atleast_1d(x)
        y = np.atleast_1d(y)
        if i >= 1 and j >= 1:
            return np.asarray(self.base.cross(i - 1, j - 1, x, y), dtype=float)
        if i == 0 and j == 0:
            fn = self._double
            return np.array([fn(a, b) for a, b in zip(x, y)])
        if i == 1 and j == 0:
            return np.array([self._single(a, b) for a, b in zip(x, y)])
        if i == 0 and j == 1:
            return np.array([self._single(b, a) for a, b in zip(x, y)])
        raise UnsupportedOrderError("numerically integrated kernels provide orders <= 1 only")


class MercerKernel(Kernel):
    """Finite Mercer expansion ``sum_l lam_l phi_l(t) phi_l(s)``.

    Parameters
    ----------
    eigenvalues : sequence of float
        Positive eigenvalues of the integral operator.
    eigenfunctions : sequence of Element
        Eigenfunctions, orthonormal with respect to ``weight``.
    weight : callable
        Density of the base measure ``nu`` on ``interval``.
    interval : (float, float)
    name : str
        Specification string used for serialisation.
    """

    family = "mercer"
    q = 0

    def __init__(self, eigenvalues: Sequence[float], eigenfunctions: Sequence[Element],
                 weight, interval, name: str = "mercer"):
        if len(eigenvalues) != len(eigenfunctions) or not eigenvalues:
            raise ValidationError("eigenvalues and eigenfunctions must pair up")
        if any(not lam > 0 for lam in eigenvalues):
            raise InvalidKernelError("Mercer eigenvalues must be positive")
        self.eigenvalues = tuple(float(x) for x in eigenvalues)
        self.eigenfunctions = tuple(eigenfunctions)
        self.weight = weight
        self.interval = tuple(float(x) for x in interval)
        self._name = name

    @property
    def spec(self) -> str:
        return self._name

    def _branch(self, i, j, x, y):
        out = np.zeros(np.broadcast(x, y).shape)
        for lam, phi in zip(self.eigenvalues, self.eigenfunctions):
            out = out + lam * phi.value(x, i) * phi.value(y, j)
        return out


def jacobi_kernel(kappa: float, alpha: float, beta: float) -> MercerKernel:
    """Rank-two kernel ``1 + kappa p(t) p(s)`` on ``[-1, 1]``.

    ``p`` is the degree-one Jacobi polynomial for the weight
    ``(1 - t)^alpha (1 + t)^beta``; the eigenfunctions are the normalised
    constant and ``p``.
    """
    from scipy.special import betaln, gammaln

    if kappa <= 0 or alpha <= -1 or beta <= -1:
        raise InvalidKernelError("jacobi kernel needs kappa > 0 and alpha, beta > -1")
    kappa, alpha, beta = float(kappa), float(alpha), float(beta)
    nu0 = math.exp((alpha + beta + 1) * math.log(2.0) + betaln(alpha + 1, beta + 1))
    h1 = math.exp((alpha + beta + 1) * math.log(2.0) - math.log(alpha + beta + 3)
                  + gammaln(alpha + 2) + gammaln(beta + 2) - gammaln(alpha + beta + 2))
    # P_1(t) = (alpha + 1) + (alpha + beta + 2)(t - 1)/2
    slope = 0.5 * (alpha + beta + 2)
    const = (alpha + 1) - slope
    phi0 = AnalyticElement.from_terms([(1.0 / math.sqrt(nu0), _pow(0))])
    phi1 = AnalyticElement.from_terms([(const / math.sqrt(h1), _pow(0)),
                                       (slope / math.sqrt(h1), _pow(1))])

    def weight(t):
        t = np.asarray(t, dtype=float)
        return np.clip(1.0 - t, 0.0, None) ** alpha * np.clip(1.0 + t, 0.0, None) ** beta

    name = f"jacobi:kappa={kappa!r},alpha={alpha!r},beta={beta!r}"
    kern = MercerKernel([nu0, kappa * h1], [phi0, phi1], weight, (-1.0, 1.0), name)
    kern.jacobi = (kappa, alpha, beta)
    return kern


def _pow(k):
    from .drift import Primitive
    return Primitive("pow", k)


def _exp(r):
    from .drift import Primitive
    return Primitive("exp", r)


# --------------------------------------------------------------------------
# functional interface


def eval_kernel(kernel: Kernel, t, s):
    """``K(t, s)``."""
    return kernel(t, s)


def eval_partial_t(kernel: Kernel, i: int, t, s, side=None):
    """One-sided ``i``-th partial derivative in ``t``."""
    return kernel.partial_t(i, t, s, side)


def eval_cross(kernel: Kernel, i: int, j: int, t, s):
    """Mixed partial ``d^{i+j} K / dt^i ds^j`` for ``i, j <= q``."""
    return kernel.cross(i, j, t, s)


def derivative_jump(kernel: Kernel, s: float | None = None) -> float:
    """Positive jump constant at order ``2q + 1``.

    Returns ``(-1)^{q+1} [K^{(2q+1)}(s+, s) - K^{(2q+1)}(s-, s)]``, the
    normalisation under which the boundary and density formulas of the
    closed-form constructions carry a positive divisor for every ``q``.
    Without ``s`` the jump must be the same at several interior points.
    """
    n = 2 * kernel.q + 1
    if n > kernel.max_order:
        raise UnsupportedError(f"{kernel.spec}: no closed form at order {n}")
    pts = np.atleast_1d(kernel.reference_points() if s is None else float(s))
    sign = (-1.0) ** (kernel.q + 1)
    right = np.atleast_1d(kernel.partial_t(n, pts, pts, Side.RIGHT))
    left = np.atleast_1d(kernel.partial_t(n, pts, pts, Side.LEFT))
    jumps = sign * (right - left)
    scale = max(float(np.max(np.abs(right))), float(np.max(np.abs(left))), 1e-300)
    if np.max(np.abs(jumps)) <= 1e-12 * scale:
        raise UnsupportedError(f"{kernel.spec}: no derivative jump at order {n}")
    if np.ptp(jumps) > 1e-10 * np.max(np.abs(jumps)):
        raise UnsupportedError(f"{kernel.spec}: the jump at order {n} depends on s")
    value = float(jumps[0])
    if value <= 0:
        raise NumericalError(f"{kernel.spec}: non-positive jump constant {value}")
    return value


def integrated_kernel(base: Kernel, a: float) -> Kernel:
    """Kernel of the integrated process ``int_a^t y``.

    Closed forms are used for Brownian motion and, with ``a = 0``, for the
    triangular kernel (valid up to ``1/lam``, where clipping would start);
    other bases fall back to :class:`IntegratedOf`.
    """
    a = float(a)
    base.check_domain(a)
    if isinstance(base, BrownianMotion):
        return IntegratedBM(a)
    if isinstance(base, Triangular) and a == 0.0:
        return IntegratedTriangular(base.lam, upper=1.0 / base.lam)
    return IntegratedOf(base, a)


def cholesky_jitter(matrix: np.ndarray, max_jitter: float = MAX_JITTER):
    """Cholesky factor with the smallest diagonal jitter that succeeds.

    Jitter is relative to the largest diagonal entry and grows by powers of
    ten from zero up to ``max_jitter``; beyond that the matrix is declared
    not positive semidefinite.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``matrix + jitter * scale * I``.
    jitter : float
        Relative jitter that was needed.
    """
    m = np.asarray(matrix, dtype=float)
    scale = float(np.max(np.abs(np.diag(m)))) if m.size else 1.0
    scale = scale if scale > 0 else 1.0
    jitter = 0.0
    eye = np.eye(m.shape[0])
    while True:
        try:
            return np.linalg.cholesky(m + jitter * scale * eye), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-16 if jitter == 0.0 else jitter * 10.0
            if jitter > max_jitter * (1 + 1e-9):
                raise NumericalError("matrix is not positive semidefinite within jitter 1e-8") from None


# --------------------------------------------------------------------------
# specification strings


def _param_dict(body: str) -> dict[str, str]:
    out: dict[str, str] = {}
    if not body.strip():
        return out
    for item in body.split(","):
        if "=" not in item:
            raise ValidationError(f"kernel parameter {item!r} must look like name=value")
        k, v = item.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def _floats(params: dict[str, str], *names: str, defaults: dict | None = None) -> list[float]:
    defaults = defaults or {}
    unknown = set(params) - set(names)
    if unknown:
        raise ValidationError(f"unknown kernel parameters: {', '.join(sorted(unknown))}")
    out = []
    for n in names:
        if n in params:
            try:
                out.append(float(params[n]))
            except ValueError:
                raise ValidationError(f"parameter {n} is not a number: {params[n]!r}") from None
        elif n in defaults:
            out.append(defaults[n])
        else:
            raise ValidationError(f"missing kernel parameter {n!r}")
    return out


def parse_kernel(spec: str, interval=None) -> Kernel:
    """Build a kernel from ``family:param=value,...``.

    Families: ``bm``, ``ou``, ``product`` (``u``, ``v`` expressions),
    ``lindrift`` (``l1``, ``l2``), ``triangular``, ``expexp``, ``expcos``,
    ``matern32``, ``car3``, ``matern52``, ``ibm`` (``a``), ``itri``,
    ``tibm`` and ``jacobi`` (``kappa``, ``alpha``, ``beta``).  ``product``
    and ``lindrift`` need the observation interval.
    """
    text = spec.strip()
    family, _, body = text.partition(":")
    family = family.strip().lower()
    if family == "integrated" or family.startswith("integrated["):
        raise UnsupportedError("numerically integrated kernels cannot be given as strings")
    if family == "product":
        params = {}
        for item in body.split(","):
            k, _, v = item.partition("=")
            params[k.strip().lower()] = v.strip()
        if set(params) != {"u", "v"}:
            raise ValidationError("product kernel needs u=<expr>,v=<expr>")
        if interval is None:
            raise ValidationError("product kernel needs an interval")
        return Product(params["u"], params["v"], interval)
    params = _param_dict(body)
    if family == "bm":
        _floats(params)
        return BrownianMotion()
    if family == "ou":
        return Exponential(*_floats(params, "lambda"))
    if family == "lindrift":
        if interval is None:
            raise ValidationError("lindrift kernel needs an interval")
        return LinearDrift(*_floats(params, "l1", "l2"), interval)
    if family == "triangular":
        return Triangular(*_floats(params, "lambda"))
    if family == "expexp":
        return ExpExp(*_floats(params, "l1", "l2"))
    if family == "expcos":
        return ExpCos(*_floats(params, "lambda", "omega"))
    if family in ("matern32", "explinear"):
        return ExpLinear(*_floats(params, "lambda"))
    if family == "car3":
        return Car3(*_floats(params, "l1", "l2", "l3"))
    if family == "matern52":
        return Matern52(*_floats(params, "lambda"))
    if family == "ibm":
        return IntegratedBM(*_floats(params, "a", defaults={"a": 0.0}))
    if family == "itri":
        return IntegratedTriangular(*_floats(params, "lambda"))
    if family == "tibm":
        _floats(params)
        return TwiceIntegratedBM()
    if family == "jacobi":
        return jacobi_kernel(*_floats(params, "kappa", "alpha", "beta"))
    raise ValidationError(f"unknown kernel family {family!r}")
