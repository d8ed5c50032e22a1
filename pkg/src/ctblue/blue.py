"""Closed-form continuous BLUEs and their verification.

Every constructor returns a :class:`BlueSolution` holding the unnormalised
measure family ``zeta``, the information matrix ``C`` and the covariance
``C^{-1}``.  Before returning, each solution is checked against the
optimality equation ``sum_i int K^{(i)}(t, s) zeta_i(dt) = f(s)`` on a grid
of Chebyshev nodes; a failed check raises :class:`ConstructionError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .drift import DriftVector, Element, parse_drift
from .errors import (
    ConstructionError,
    DegenerateModelError,
    DomainError,
    InvalidKernelError,
    RepresentationError,
    UnsupportedError,
    ValidationError,
)
from .kernels import (
    BrownianMotion,
    Car3,
    ExpCos,
    ExpExp,
    ExpLinear,
    Exponential,
    IntegratedBM,
    IntegratedTriangular,
    Kernel,
    LinearDrift,
    MercerKernel,
    Product,
    Side,
    Triangular,
    TwiceIntegratedBM,
    integrated_kernel,
    parse_kernel,
)
from .measures import (
    CallableDensity,
    Density,
    DriftDensity,
    MarkovDensity,
    MeasureFamily,
    SignedVectorMeasure,
    apply_kernel,
    c_diagnostics,
    c_matrix,
    family_from_json,
    family_to_json,
)
from .quadrature import integrate

RESIDUAL_NODES = 201
RESIDUAL_TOL = 1e-8
APPROXIMATE_TOL = 1e-5
ASYMMETRY_TOL = 1e-9
CONDITION_LIMIT = 1e12


def chebyshev_nodes(a: float, b: float, n: int = RESIDUAL_NODES) -> np.ndarray:
    """Chebyshev--Lobatto nodes on ``[a, b]``, endpoints included, ascending."""
    if n < 2:
        return np.array([0.5 * (a + b)])
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    out = 0.5 * (a + b) + 0.5 * (b - a) * x
    out[0], out[-1] = a, b
    return out


def residual_sup(family: MeasureFamily, kernel: Kernel, drift: DriftVector,
                 n: int = RESIDUAL_NODES) -> float:
    """``max_s || sum_i int K^{(i)}(t,s) zeta_i(dt) - f(s) ||_inf`` over Chebyshev nodes."""
    a, b = family.interval
    s = chebyshev_nodes(a, b, n)
    lhs = apply_kernel(family, kernel, s)
    return float(np.max(np.abs(lhs - drift(s, 0))))


# --------------------------------------------------------------------------
# solution container


@dataclass
class BlueSolution:
    """Unnormalised BLUE measures together with ``C`` and ``C^{-1}``.

    The estimator weights are ``G_i = C^{-1} zeta_i``; see :meth:`normalized`.
    """

    family: MeasureFamily
    C: np.ndarray
    covariance: np.ndarray
    residual_sup: float
    tolerance: float
    kernel: Kernel
    drift: DriftVector
    method: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def interval(self) -> tuple[float, float]:
        return self.family.interval

    @property
    def kernel_spec(self) -> str:
        return self.kernel.spec

    @property
    def drift_spec(self) -> str:
        return self.drift.spec

    def normalized(self) -> MeasureFamily:
        """The family ``G = C^{-1} zeta``."""
        return self.family.transformed(self.covariance)

    def to_json(self) -> dict:
        out = family_to_json(self.family)
        out.update({
            "C": self.C.tolist(),
            "covariance": self.covariance.tolist(),
            "residual_sup": self.residual_sup,
            "tolerance": self.tolerance,
            "kernel": self.kernel_spec,
            "drift": self.drift_spec,
            "method": self.method,
        })
        return out


def invert_information(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrise ``C`` after checking its asymmetry and invert it by Cholesky.

    Returns
    -------
    C_sym, covariance : ndarray
    """
    diag = c_diagnostics(C)
    if diag.asymmetry > ASYMMETRY_TOL:
        raise DegenerateModelError(f"information matrix asymmetry {diag.asymmetry:.3g} exceeds 1e-9")
    Cs = 0.5 * (C + C.T)
    if not np.all(np.isfinite(Cs)):
        raise DegenerateModelError("information matrix is not finite")
    try:
        factor = cho_factor(Cs, lower=True)
    except np.linalg.LinAlgError:
        raise DegenerateModelError("information matrix is not positive definite") from None
    if diag.condition > CONDITION_LIMIT:
        raise DegenerateModelError(f"information matrix condition {diag.condition:.3g} exceeds 1e12")
    cov = cho_solve(factor, np.eye(Cs.shape[0]))
    return Cs, 0.5 * (cov + cov.T)


def _tolerance(drift: DriftVector) -> float:
    return APPROXIMATE_TOL if drift.approximate else RESIDUAL_TOL


def _finalize(family: MeasureFamily, kernel: Kernel, drift: DriftVector, method: str,
              nodes: int = RESIDUAL_NODES, **extras) -> BlueSolution:
    tol = _tolerance(drift)
    res = residual_sup(family, kernel, drift, nodes)
    if not res < tol:
        raise ConstructionError(
            f"{method}: optimality residual {res:.3g} exceeds {tol:g}; "
            "the construction does not solve the optimality equation")
    C, cov = invert_information(c_matrix(family, drift))
    return BlueSolution(family, C, cov, res, tol, kernel, drift, method, dict(extras))


def _resolve_signs(variants: dict[str, MeasureFamily], kernel: Kernel, drift: DriftVector,
                   method: str, nodes: int = RESIDUAL_NODES) -> BlueSolution:
    """Keep the single variant with a small residual and a positive definite ``C``."""
    tol = _tolerance(drift)
    passing = []
    report = {}
    for name, fam in variants.items():
        res = residual_sup(fam, kernel, drift, nodes)
        C = c_matrix(fam, drift)
        pd = bool(np.all(np.linalg.eigvalsh(0.5 * (C + C.T)) > 0))
        report[name] = (res, pd)
        if res < tol and pd:
            passing.append(name)
    if len(passing) != 1:
        detail = ", ".join(f"{k}: residual {r:.3g}, C pd={p}" for k, (r, p) in report.items())
        raise ConstructionError(f"{method}: sign resolution needs exactly one valid variant ({detail})")
    name = passing[0]
    return _finalize(variants[name], kernel, drift, f"{method}[{name}]", nodes,
                     sign_report=report)


def _prepare(drift: DriftVector, interval, order: int) -> DriftVector:
    if interval is not None:
        interval = tuple(float(x) for x in interval)
        if interval != drift.interval:
            drift = drift.with_interval(interval)
    if drift.max_order < order:
        raise ValidationError(f"drift must provide derivatives up to order {order}")
    return drift


def _at(drift: DriftVector, t: float, order: int) -> np.ndarray:
    return drift(np.array([t]), order)[0]


def _family(interval, m: int, components) -> MeasureFamily:
    """Family from ``[(atoms, density), ...]`` per order."""
    return MeasureFamily([SignedVectorMeasure(atoms, dens, interval, m)
                          for atoms, dens in components])


# --------------------------------------------------------------------------
# q = 0 constructions


def markov_product_family(u: Element, v: Element, drift: DriftVector) -> MeasureFamily:
    """Measures for ``K(t,s) = u(min(t,s)) v(max(t,s))``.

    With ``W = u'v - uv'``: ``z_A = (f(A) u'(A)/u(A) - f'(A)) / W(A)``,
    ``z_B = (f'(B) v(B) - f(B) v'(B)) / (v(B) W(B))`` and density
    ``-(1/v) (h'/q')'`` with ``h = f/v`` and ``q = u/v``.
    """
    a, b = drift.interval
    t = chebyshev_nodes(a, b)
    u0, v0 = u.value(t, 0), v.value(t, 0)
    if np.any(u0 <= 0) or np.any(v0 <= 0):
        raise InvalidKernelError("product kernel needs u, v > 0 on the interval")
    W = u.value(t, 1) * v0 - u0 * v.value(t, 1)
    if np.any(W <= 0):
        raise InvalidKernelError("product kernel needs u/v strictly increasing")

    def val(e, x, k):
        return float(e.value(np.array([x]), k)[0])

    WA = val(u, a, 1) * val(v, a, 0) - val(u, a, 0) * val(v, a, 1)
    WB = val(u, b, 1) * val(v, b, 0) - val(u, b, 0) * val(v, b, 1)
    zA = (_at(drift, a, 0) * val(u, a, 1) / val(u, a, 0) - _at(drift, a, 1)) / WA
    zB = (_at(drift, b, 1) * val(v, b, 0) - _at(drift, b, 0) * val(v, b, 1)) / (val(v, b, 0) * WB)
    return _family((a, b), drift.m, [([(a, zA), (b, zB)], _markov_density(u, v, drift, t, W))])


def _markov_density(u: Element, v: Element, drift: DriftVector, t, W) -> Density:
    """``z = c0 f + c1 f' + c2 f''``; a :class:`DriftDensity` when the ``c_k`` are constant."""
    v0, v1, v2 = (v.value(t, k) for k in range(3))
    u0, u2 = u.value(t, 0), u.value(t, 2)
    g = u2 * v0 - u0 * v2
    coef = {2: -1.0 / W, 1: g / W ** 2, 0: v2 / (v0 * W) - v1 * g / (v0 * W ** 2)}
    const = {}
    for k, c in coef.items():
        if np.ptp(c) > 1e-13 * max(1.0, float(np.max(np.abs(c)))):
            return MarkovDensity(u, v, drift)
        const[k] = float(np.mean(c))
    return DriftDensity(drift, const)


def blue_markov_product(u: Element | str, v: Element | str, drift: DriftVector,
                        interval=None, kernel: Kernel | None = None) -> BlueSolution:
    """BLUE for a Markov product kernel ``u(t) v(s)``, ``t <= s``.

    ``kernel`` defaults to :class:`Product` ``(u, v)``; Brownian motion and
    the exponential kernel pass themselves so the residual is checked
    against their own evaluators.
    """
    from .drift import parse_element

    u = parse_element(u) if isinstance(u, str) else u
    v = parse_element(v) if isinstance(v, str) else v
    drift = _prepare(drift, interval, 2)
    kernel = kernel if kernel is not None else Product(u, v, drift.interval)
    return _finalize(markov_product_family(u, v, drift), kernel, drift, "markov-product")


def linear_drift_family(l1: float, l2: float, drift: DriftVector) -> MeasureFamily:
    """Measures for ``K(t,s) = 1 + l1 min(t,s) - l2 max(t,s)``.

    ``den = l1 + l2 + l1^2 A - l2^2 B``;
    ``z_A = (-f'(A) + (l1^2 f(A) + l1 l2 f(B)) / den) / (l1 + l2)``,
    ``z_B = (f'(B) + (l1 l2 f(A) + l2^2 f(B)) / den) / (l1 + l2)``,
    density ``-f'' / (l1 + l2)``.
    """
    a, b = drift.interval
    den = l1 + l2 + l1 ** 2 * a - l2 ** 2 * b
    if den == 0 or l1 + l2 == 0:
        raise DegenerateModelError("linear-drift kernel constants are singular")
    fa, fb = _at(drift, a, 0), _at(drift, b, 0)
    zA = (-_at(drift, a, 1) + (l1 ** 2 * fa + l1 * l2 * fb) / den) / (l1 + l2)
    zB = (_at(drift, b, 1) + (l1 * l2 * fa + l2 ** 2 * fb) / den) / (l1 + l2)
    dens = DriftDensity(drift, {2: -1.0 / (l1 + l2)})
    return _family((a, b), drift.m, [([(a, zA), (b, zB)], dens)])


def blue_linear_drift_kernel(l1: float, l2: float, drift: DriftVector,
                             interval=None) -> BlueSolution:
    """BLUE for ``K(t,s) = 1 + l1 min(t,s) - l2 max(t,s)``."""
    drift = _prepare(drift, interval, 2)
    kernel = LinearDrift(l1, l2, drift.interval)
    return _finalize(linear_drift_family(kernel.l1, kernel.l2, drift), kernel, drift,
                     "linear-drift")


def blue_triangular(lam: float, drift: DriftVector, interval=None) -> BlueSolution:
    """BLUE for ``max(1 - lam |t - s|, 0)`` on an interval of length ``<= 1/lam``.

    There the kernel equals the linear-drift kernel with ``l1 = l2 = lam``.
    """
    drift = _prepare(drift, interval, 2)
    a, b = drift.interval
    kernel = Triangular(lam)
    if lam * (b - a) > 1.0 + 1e-15:
        raise InvalidKernelError("triangular construction requires lam (B - A) <= 1")
    return _finalize(linear_drift_family(kernel.lam, kernel.lam, drift), kernel, drift,
                     "triangular")


# --------------------------------------------------------------------------
# Mercer expansions


def _weighted_gram(funcs: Sequence[Callable], weight: Callable, interval) -> np.ndarray:
    a, b = interval

    def integrand(t):
        vals = np.stack([np.asarray(f(t), dtype=float) for f in funcs], axis=-1)
        w = np.asarray(weight(t), dtype=float)
        return vals[:, :, None] * vals[:, None, :] * w[:, None, None]

    val, _ = integrate(integrand, a, b)
    return val


def mercer_coefficients(drift: DriftVector, eigenfunctions: Sequence[Element], weight: Callable,
                        interval=None) -> np.ndarray:
    """Projections ``q_l = int f phi_l nu``; returns an ``L x m`` array."""
    a, b = interval or drift.interval

    def integrand(t):
        phi = np.stack([e.value(t, 0) for e in eigenfunctions], axis=-1)
        return phi[:, :, None] * drift(t, 0)[:, None, :] * np.asarray(weight(t))[:, None, None]

    val, _ = integrate(integrand, a, b)
    return val


def mercer_density(eigenvalues, eigenfunctions, coefficients, weight, m: int) -> CallableDensity:
    lam = np.asarray(eigenvalues, dtype=float)
    Q = np.asarray(coefficients, dtype=float).reshape(len(lam), m)

    def fn(t):
        phi = np.stack([e.value(t, 0) for e in eigenfunctions], axis=-1)
        return np.asarray(weight(t))[:, None] * ((phi / lam) @ Q)

    return CallableDensity(fn, m, "mercer")


def blue_mercer(eigenvalues: Sequence[float], eigenfunctions: Sequence[Element],
                coefficients, weight: Callable, interval, drift: DriftVector,
                kernel: Kernel | None = None) -> BlueSolution:
    """Atomless BLUE ``zeta(dt) = sum_l q_l phi_l(t) nu(dt) / lam_l``.

    Parameters
    ----------
    eigenvalues, eigenfunctions
        Positive eigenvalues and ``nu``-orthonormal eigenfunctions.
    coefficients : array_like, shape (L, m)
        Expansion ``f = sum_l q_l phi_l``.
    weight : callable
        Density of ``nu``.
    interval : (float, float)
    drift : DriftVector
        Used to check the expansion and to compute ``C``.
    kernel : Kernel, optional
        Defaults to the kernel ``sum_l lam_l phi_l(t) phi_l(s)``.
    """
    interval = tuple(float(x) for x in interval)
    drift = _prepare(drift, interval, 0)
    L = len(eigenvalues)
    Q = np.asarray(coefficients, dtype=float).reshape(L, drift.m)
    gram = _weighted_gram([lambda t, e=e: e.value(t, 0) for e in eigenfunctions], weight, interval)
    if np.max(np.abs(gram - np.eye(L))) > 1e-6:
        raise RepresentationError("eigenfunctions are not orthonormal under the base measure")
    t = chebyshev_nodes(*interval)
    phi = np.stack([e.value(t, 0) for e in eigenfunctions], axis=-1)
    if np.max(np.abs(phi @ Q - drift(t, 0))) > 1e-8:
        raise RepresentationError("drift is not in the span of the eigenfunctions")
    if kernel is None:
        kernel = MercerKernel(eigenvalues, eigenfunctions, weight, interval)
    dens = mercer_density(eigenvalues, eigenfunctions, Q, weight, drift.m)
    family = _family(interval, drift.m, [((), dens)])
    closed = (Q.T / np.asarray(eigenvalues, dtype=float)) @ Q
    return _finalize(family, kernel, drift, "mercer", closed_C=closed)


def _blue_mercer_kernel(kernel: MercerKernel, drift: DriftVector) -> BlueSolution:
    Q = mercer_coefficients(drift, kernel.eigenfunctions, kernel.weight, kernel.interval)
    return blue_mercer(kernel.eigenvalues, kernel.eigenfunctions, Q, kernel.weight,
                       kernel.interval, drift, kernel)


# --------------------------------------------------------------------------
# once differentiable processes


@dataclass(frozen=True)
class SmoothQ1Constants:
    """Constants of the explicit BLUE for once differentiable processes."""

    tau0: float
    tau2: float
    gamma0A: float
    gamma1A: float
    beta0A: float
    beta1A: float
    gamma0B: float
    gamma1B: float
    beta0B: float
    beta1B: float
    s3: float

    @classmethod
    def symmetric(cls, tau0, tau2, beta0, beta1, gamma0, gamma1, s3) -> "SmoothQ1Constants":
        return cls(tau0, tau2, gamma0, gamma1, beta0, beta1, gamma0, gamma1, beta0, beta1, s3)

    def identity_defects(self, kernel: Kernel, interval=(0.0, 1.0)) -> tuple[float, float]:
        """Sup defects of the differential identity and of the boundary terms.

        The first value bounds ``tau0 K - tau2 K^{(2)} + K^{(4)}`` on a 21 x 21
        off-diagonal grid.  The second bounds each boundary function
        ``J_1 .. J_4`` on a 51-point grid; they vanish separately.
        """
        a, b = (float(x) for x in interval)
        g = np.linspace(a, b, 21)
        tt, ss = np.meshgrid(g + 0.5 * (g[1] - g[0]) * 0.37, g, indexing="ij")
        tt = np.clip(tt, a, b)
        keep = tt != ss
        tv, sv = tt[keep], ss[keep]
        d1 = self.tau0 * kernel.partial_t(0, tv, sv) - self.tau2 * kernel.partial_t(2, tv, sv) \
            + kernel.partial_t(4, tv, sv)
        s = np.linspace(a, b, 51)
        A = np.full_like(s, a)
        B = np.full_like(s, b)
        L, R = Side.LEFT, Side.RIGHT

        def KA(i):
            return kernel.partial_t(i, A, s, L)

        def KB(i):
            return kernel.partial_t(i, B, s, R)

        J1 = -self.gamma1A * KA(0) + self.beta1A * KA(1) + self.tau2 * KA(0) - KA(2)
        J2 = self.gamma0A * KA(0) - self.beta0A * KA(1) - self.tau2 * KA(1) + KA(3)
        # signs at B follow the z_B, z_{1,B} formulas
        J3 = self.gamma1B * KB(0) + self.beta1B * KB(1) - self.tau2 * KB(0) + KB(2)
        J4 = self.gamma0B * KB(0) + self.beta0B * KB(1) + self.tau2 * KB(1) - KB(3)
        d2 = max(float(np.max(np.abs(J))) for J in (J1, J2, J3, J4))
        return float(np.max(np.abs(d1))), d2


def q1_constants(kernel: Kernel, interval=(0.0, 1.0)) -> SmoothQ1Constants:
    """Constants for the CAR(2) kernels, verified before they are returned."""
    if isinstance(kernel, ExpExp):
        l1, l2 = kernel.l1, kernel.l2
        c = SmoothQ1Constants.symmetric(
            tau0=l1 ** 2 * l2 ** 2, tau2=l1 ** 2 + l2 ** 2, beta0=l1 * l2, beta1=l1 + l2,
            gamma0=l1 * l2 * (l1 + l2), gamma1=l1 ** 2 + l1 * l2 + l2 ** 2,
            s3=2 * l1 * l2 * (l1 + l2))
    elif isinstance(kernel, ExpCos):
        lam, om = kernel.lam, kernel.omega
        r2 = lam ** 2 + om ** 2
        c = SmoothQ1Constants.symmetric(
            tau0=r2 ** 2, tau2=2 * (lam ** 2 - om ** 2), beta0=r2, beta1=2 * lam,
            gamma0=2 * lam * r2, gamma1=3 * lam ** 2 - om ** 2, s3=4 * lam * r2)
    elif isinstance(kernel, ExpLinear):
        lam = kernel.lam
        c = SmoothQ1Constants.symmetric(
            tau0=lam ** 4, tau2=2 * lam ** 2, beta0=lam ** 2, beta1=2 * lam,
            gamma0=2 * lam ** 3, gamma1=3 * lam ** 2, s3=4 * lam ** 3)
    else:
        raise UnsupportedError(f"no closed-form constants for {kernel.spec}")
    if not c.s3 > 0:
        raise ConstructionError("jump constant must be positive")
    d1, d2 = c.identity_defects(kernel, interval)
    scale = max(1.0, abs(c.tau0), abs(c.tau2), c.s3)
    if d1 > 1e-8 * scale or d2 > 1e-8 * scale:
        raise ConstructionError(f"constants fail their identities ({d1:.3g}, {d2:.3g})")
    return c


def smooth_q1_family(drift: DriftVector, c: SmoothQ1Constants) -> MeasureFamily:
    a, b = drift.interval
    f = {k: _at(drift, a, k) for k in range(4)}
    g = {k: _at(drift, b, k) for k in range(4)}
    zA = (f[3] - c.gamma1A * f[1] + c.gamma0A * f[0]) / c.s3
    zB = (-g[3] + c.gamma1B * g[1] + c.gamma0B * g[0]) / c.s3
    z1A = (-f[2] + c.beta1A * f[1] - c.beta0A * f[0]) / c.s3
    z1B = (g[2] + c.beta1B * g[1] + c.beta0B * g[0]) / c.s3
    dens = DriftDensity(drift, {0: c.tau0 / c.s3, 2: -c.tau2 / c.s3, 4: 1.0 / c.s3})
    return _family((a, b), drift.m, [([(a, zA), (b, zB)], dens), ([(a, z1A), (b, z1B)], None)])


def blue_smooth_q1(drift: DriftVector, kernel: Kernel, constants: SmoothQ1Constants | None = None,
                   interval=None) -> BlueSolution:
    """BLUE for a once differentiable kernel with known constants."""
    drift = _prepare(drift, interval, 4)
    if constants is None:
        constants = q1_constants(kernel, drift.interval)
    return _finalize(smooth_q1_family(drift, constants), kernel, drift, "smooth-q1",
                     constants=constants)


# --------------------------------------------------------------------------
# integrated kernels


def integrated_bm_family(a0: float, drift: DriftVector) -> MeasureFamily:
    A, B = drift.interval
    if not a0 < A:
        raise DomainError("integrated Brownian motion needs its origin strictly below A")
    f = {k: _at(drift, A, k) for k in range(4)}
    g = {k: _at(drift, B, k) for k in range(4)}
    d = A - a0
    e = A + 3 * a0
    zA = f[3] - 6 * (A + a0) / (e * d ** 2) * f[1] + 12 * A / (e * d ** 3) * f[0]
    z1A = -f[2] + 4 * (A + 2 * a0) / (e * d) * f[1] - 6 * (A + a0) / (e * d ** 2) * f[0]
    return _family((A, B), drift.m, [
        ([(A, zA), (B, -g[3])], DriftDensity(drift, {4: 1.0})),
        ([(A, z1A), (B, g[2])], None),
    ])


def blue_integrated_bm(a: float, drift: DriftVector, interval=None) -> BlueSolution:
    """BLUE for integrated Brownian motion started at ``a < A``."""
    drift = _prepare(drift, interval, 4)
    kernel = IntegratedBM(a)
    return _finalize(integrated_bm_family(kernel.a, drift), kernel, drift, "integrated-bm")


def integrated_triangular_family(lam: float, drift: DriftVector) -> MeasureFamily:
    A, B = drift.interval
    if not A > 0:
        raise DomainError("integrated triangular construction needs A > 0")
    if not lam * (B - A) < 1:
        raise InvalidKernelError("integrated triangular construction needs lam (B - A) < 1")
    k1, k2, k3, k4 = (A * lam - j * B * lam + 2 * j for j in (1, 2, 3, 4))
    f = {k: _at(drift, A, k) for k in range(4)}
    g = {k: _at(drift, B, k) for k in range(4)}
    zA = f[3] - 6 * k2 / (A ** 2 * k4) * f[1] + 6 * lam / (A * k4) * g[1] + 12 * k1 / (A ** 3 * k4) * f[0]
    z1A = -f[2] + 4 * k3 / (A * k4) * f[1] - 2 * lam / k4 * g[1] - 6 * k2 / (A ** 2 * k4) * f[0]
    z1B = g[2] - 2 * lam / k4 * f[1] + 4 * lam / k4 * g[1] + 6 * lam / (A * k4) * f[0]
    zB = -g[3]
    s = 1.0 / (2 * lam)
    return _family((A, B), drift.m, [
        ([(A, s * zA), (B, s * zB)], DriftDensity(drift, {4: s})),
        ([(A, s * z1A), (B, s * z1B)], None),
    ])


def blue_integrated_triangular(lam: float, drift: DriftVector, interval=None) -> BlueSolution:
    """BLUE for the triangular kernel integrated from 0."""
    drift = _prepare(drift, interval, 4)
    kernel = IntegratedTriangular(lam)
    return _finalize(integrated_triangular_family(kernel.lam, drift), kernel, drift,
                     "integrated-triangular")


def _shift_density(density: Density | None, integrated: DriftVector) -> Density | None:
    """Re-express a density built on ``f`` in terms of ``F`` with ``F' = f``."""
    if density is None:
        return None
    if isinstance(density, DriftDensity):
        return DriftDensity(integrated, {k + 1: c for k, c in density.coeffs.items()})
    return CallableDensity(density, density.m, "transferred")


def blue_transfer_integrated(base: BlueSolution, locscale: MeasureFamily | None,
                             kernel: Kernel | None = None, a: float | None = None) -> BlueSolution:
    """BLUE for the integrated process from a BLUE for the base process.

    Parameters
    ----------
    base : BlueSolution
        Solution for the base kernel ``K`` with ``q = 0``.
    locscale : MeasureFamily or None
        Family ``eta`` with ``int R eta_0 + int R^{(1)} eta_1 = 1`` for the
        integrated kernel ``R``.  May be ``None`` only when ``a = A``.
    kernel : Kernel, optional
        The base kernel; defaults to ``base.kernel``.
    a : float, optional
        Origin of integration; defaults to ``A``.

    Notes
    -----
    With ``c = int_a^A [int K(t,s) zeta_0(dt) - f(s)] ds`` the new family is
    ``(-c eta_0, -c eta_1 + zeta_0)`` and the drift is ``int_a^t f``.
    """
    K = kernel if kernel is not None else base.kernel
    if base.family.q != 0:
        raise ValidationError("the base solution must be of order 0")
    A, B = base.interval
    a = A if a is None else float(a)
    if a > A:
        raise DomainError("the origin of integration must not exceed A")
    f = base.drift
    m = f.m
    R = integrated_kernel(K, a)
    F = f.antiderivative(a)
    zeta0 = base.family[0]

    if a == A:
        c = np.zeros(m)
    else:
        def integrand(s):
            return apply_kernel(base.family, K, s) - f(s, 0)

        c, _ = integrate(integrand, a, A)

    if locscale is None:
        if np.any(c != 0):
            raise ValidationError("a location-scale family is required when a < A")
        eta = MeasureFamily.zero(1, (A, B), 1)
    else:
        eta = locscale.padded(1)
        if eta.m != 1 or eta.interval != (A, B):
            raise ValidationError("the location-scale family must be scalar on [A, B]")
        one = DriftVector(["1"], (A, B))
        eta_res = residual_sup(eta, R, one)
        if eta_res > RESIDUAL_TOL:
            raise ValidationError(f"location-scale family fails its equation (residual {eta_res:.3g})")

    M = -np.asarray(c, dtype=float).reshape(m, 1)
    first = SignedVectorMeasure(zeta0.atoms, _shift_density(zeta0.density, F), (A, B), m)
    comp0 = eta[0].transformed(M)
    comp1 = eta[1].transformed(M) + first
    family = MeasureFamily([comp0, comp1])
    return _finalize(family, R, F, "transfer-integrated", c=np.asarray(c, dtype=float))


# --------------------------------------------------------------------------
# twice differentiable processes


def twice_integrated_bm_family(drift: DriftVector, sign: float = 1.0) -> MeasureFamily:
    """Boundary atoms and density of the closed form, times ``sign``."""
    A, B = drift.interval
    if not A > 0:
        raise DomainError("twice integrated Brownian motion construction needs A > 0")
    f = {k: _at(drift, A, k) for k in range(6)}
    g = {k: _at(drift, B, k) for k in range(6)}
    zA = (A ** 5 * f[5] - 60 * A ** 2 * f[2] + 360 * A * f[1] - 720 * f[0]) / A ** 5
    z1A = -(A ** 4 * f[4] - 36 * A ** 2 * f[2] + 192 * A * f[1] - 360 * f[0]) / A ** 4
    z2A = (A ** 3 * f[3] - 9 * A ** 2 * f[2] + 36 * A * f[1] - 60 * f[0]) / A ** 3
    return _family((A, B), drift.m, [
        ([(A, sign * zA), (B, -sign * g[5])], DriftDensity(drift, {6: sign})),
        ([(A, sign * z1A), (B, sign * g[4])], None),
        ([(A, sign * z2A), (B, -sign * g[3])], None),
    ])


def blue_twice_integrated_bm(drift: DriftVector, interval=None) -> BlueSolution:
    """BLUE for twice integrated Brownian motion, sign fixed by the residual."""
    drift = _prepare(drift, interval, 6)
    variants = {
        "plain": twice_integrated_bm_family(drift, 1.0),
        "negated": twice_integrated_bm_family(drift, -1.0),
    }
    return _resolve_signs(variants, TwiceIntegratedBM(), drift, "twice-integrated-bm")


def _car3_terms(g, lam):
    l1, l2, l3 = lam
    S = l1 + l2 + l3
    P = l1 * l2 * l3
    e2 = l1 * l2 + l1 * l3 + l2 * l3
    sq = l1 ** 2 + l2 ** 2 + l3 ** 2
    sq2 = (l1 * l2) ** 2 + (l1 * l3) ** 2 + (l2 * l3) ** 2
    pp = (l1 + l2) * (l1 + l3) * (l2 + l3)
    z0 = g[5] - sq * g[3] - P * g[2] + (sq2 + P * S) * g[1] - P * e2 * g[0]
    z1 = -g[4] + (sq + e2) * g[2] - pp * g[1] + P * S * g[0]
    z2 = g[3] - S * g[2] + e2 * g[1] - P * g[0]
    return z0, z1, z2


def car3_constants(lam) -> dict[str, float]:
    """``tau_0, tau_2, tau_4`` and the jump constant ``s_5``."""
    l1, l2, l3 = lam
    S = l1 + l2 + l3
    P = l1 * l2 * l3
    pp = (l1 + l2) * (l1 + l3) * (l2 + l3)
    return {
        "tau0": -(P ** 2),
        "tau2": (l1 * l2) ** 2 + (l1 * l3) ** 2 + (l2 * l3) ** 2,
        "tau4": -(l1 ** 2 + l2 ** 2 + l3 ** 2),
        "s5": 2 * P * pp / S,
    }


def car3_family(lam, drift: DriftVector, sign: float = 1.0,
                upper: str = "reflected") -> MeasureFamily:
    """CAR(3) measures before sign resolution.

    The atoms at ``A`` are polynomials in ``f^{(k)}(A)``.  With
    ``upper="reflected"`` the atoms at ``B`` follow from the time reversal
    ``t -> A + B - t``: the same polynomials in ``(-1)^k f^{(k)}(B)`` with
    an extra ``(-1)^j`` for component ``j``.  ``upper="negated-copy"`` negates
    the ``A`` polynomials evaluated at ``B`` instead; that variant does not
    solve the optimality equation and is kept for comparison.
    """
    A, B = drift.interval
    const = car3_constants(lam)
    s5 = const["s5"]
    ga = [_at(drift, A, k) for k in range(6)]
    gb = [_at(drift, B, k) for k in range(6)]
    zA = _car3_terms(ga, lam)
    if upper == "reflected":
        bb = _car3_terms([(-1) ** k * x for k, x in enumerate(gb)], lam)
        zB = tuple((-1) ** j * x for j, x in enumerate(bb))
    elif upper == "negated-copy":
        zB = tuple(-x for x in _car3_terms(gb, lam))
    else:
        raise ValidationError(f"unknown boundary convention {upper!r}")
    dens = DriftDensity(drift, {0: sign * const["tau0"] / s5, 2: sign * const["tau2"] / s5,
                                4: sign * const["tau4"] / s5, 6: sign / s5})
    comps = []
    for j in range(3):
        atoms = [(A, sign * zA[j] / s5), (B, sign * zB[j] / s5)]
        comps.append((atoms, dens if j == 0 else None))
    return _family((A, B), drift.m, comps)


def blue_car3(l1: float, l2: float, l3: float, drift: DriftVector, interval=None,
              kernel: Car3 | None = None) -> BlueSolution:
    """BLUE for the CAR(3) kernel (distinct rates or one triple rate)."""
    drift = _prepare(drift, interval, 6)
    kernel = kernel if kernel is not None else Car3(l1, l2, l3)
    lam = kernel.rates
    variants = {
        "plain": car3_family(lam, drift, 1.0),
        "negated": car3_family(lam, drift, -1.0),
    }
    return _resolve_signs(variants, kernel, drift, "car3")


# --------------------------------------------------------------------------
# verification and dispatch


@dataclass(frozen=True)
class ResidualReport:
    """Diagnostics of a solution against the optimality equation.

    Attributes
    ----------
    residual_sup : float
        Sup-norm residual of ``sum_i int K^{(i)} zeta_i - f``.
    normalized_residual : float
        Sup-norm residual of ``sum_i int K^{(i)} G_i - D f`` with ``D`` the covariance.
    unbiasedness_defect : float
        ``max |sum_i int G_i f^{(i)T} - I|``.
    symmetry_defect : float
        Relative asymmetry of ``C``.
    inverse_defect : float
        ``max |C C^{-1} - I|``.
    grid_size : int
    tolerance : float
    """

    residual_sup: float
    normalized_residual: float
    unbiasedness_defect: float
    symmetry_defect: float
    inverse_defect: float
    grid_size: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual_sup < self.tolerance


def verify_wiener_hopf(solution: BlueSolution, kernel: Kernel | None = None,
                       drift: DriftVector | None = None, grid_size: int = RESIDUAL_NODES
                       ) -> ResidualReport:
    """Re-evaluate a solution on ``grid_size`` Chebyshev nodes."""
    kernel = kernel if kernel is not None else solution.kernel
    drift = drift if drift is not None else solution.drift
    a, b = solution.interval
    s = chebyshev_nodes(a, b, grid_size)
    cov = np.asarray(solution.covariance, dtype=float)
    C = np.asarray(solution.C, dtype=float)
    fam = solution.family
    lhs = apply_kernel(fam, kernel, s)
    fs = drift(s, 0)
    res = float(np.max(np.abs(lhs - fs)))
    G = solution.normalized()
    norm_res = float(np.max(np.abs(lhs @ cov.T - fs @ cov.T)))
    unbiased = float(np.max(np.abs(c_matrix(G, drift) - np.eye(drift.m))))
    sym = c_diagnostics(c_matrix(fam, drift)).asymmetry
    inv = float(np.max(np.abs(C @ cov - np.eye(drift.m))))
    return ResidualReport(res, norm_res, unbiased, sym, inv, grid_size, solution.tolerance)


def solve(kernel: Kernel, drift: DriftVector, interval=None) -> BlueSolution:
    """Route a kernel to its closed-form construction."""
    drift = _prepare(drift, interval, 0)
    A, B = drift.interval
    if isinstance(kernel, BrownianMotion):
        return blue_markov_product(kernel.u, kernel.v, drift, kernel=kernel)
    if isinstance(kernel, Exponential):
        return blue_markov_product(kernel.u, kernel.v, drift, kernel=kernel)
    if isinstance(kernel, Product):
        return blue_markov_product(kernel.u, kernel.v, drift, kernel=kernel)
    if isinstance(kernel, LinearDrift):
        if kernel.interval != (A, B):
            kernel = LinearDrift(kernel.l1, kernel.l2, (A, B))
        return blue_linear_drift_kernel(kernel.l1, kernel.l2, drift)
    if isinstance(kernel, Triangular):
        return blue_triangular(kernel.lam, drift)
    if isinstance(kernel, (ExpExp, ExpCos, ExpLinear)):
        return blue_smooth_q1(drift, kernel)
    if isinstance(kernel, Car3):
        return blue_car3(*kernel.rates, drift, kernel=kernel)
    if isinstance(kernel, IntegratedBM):
        return blue_integrated_bm(kernel.a, drift)
    if isinstance(kernel, IntegratedTriangular):
        return blue_integrated_triangular(kernel.lam, drift)
    if isinstance(kernel, TwiceIntegratedBM):
        return blue_twice_integrated_bm(drift)
    if isinstance(kernel, MercerKernel):
        return _blue_mercer_kernel(kernel, drift)
    raise UnsupportedError(f"no closed-form BLUE for kernel {kernel.spec}")


def solution_from_json(obj: dict) -> BlueSolution:
    """Rebuild a solution written by :meth:`BlueSolution.to_json`."""
    try:
        interval = tuple(float(x) for x in obj["interval"])
        kernel = parse_kernel(obj["kernel"], interval)
        drift = parse_drift(obj["drift"], interval)
        C = np.asarray(obj["C"], dtype=float)
        cov = np.asarray(obj["covariance"], dtype=float)
        res = float(obj["residual_sup"])
        tol = float(obj.get("tolerance", RESIDUAL_TOL))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed solution: {exc}") from None
    if C.shape != (drift.m, drift.m) or cov.shape != C.shape:
        raise ValidationError("matrix shapes do not match the drift dimension")

    def resolver(tag):
        if tag == "mercer" and isinstance(kernel, MercerKernel):
            Q = mercer_coefficients(drift, kernel.eigenfunctions, kernel.weight, interval)
            return mercer_density(kernel.eigenvalues, kernel.eigenfunctions, Q, kernel.weight, drift.m)
        raise ValidationError(f"cannot rebuild density {tag!r}")

    family = family_from_json(obj, drift, kernel, resolver)
    return BlueSolution(family, C, cov, res, tol, kernel, drift, str(obj.get("method", "")))
