"""Discrete designs, GLS and OLS estimators, AR(2) machinery and path sampling.

Observations are pairs ``(t, i)``: the ``i``-th derivative of the path at
time ``t``.  The discrete BLUE is generalised least squares with the joint
covariance of the observed values and derivatives.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve as dense_solve, solveh_banded

from .blue import SmoothQ1Constants, blue_smooth_q1, q1_constants
from .drift import DriftVector
from .errors import (
    DegenerateDesignError,
    DegenerateModelError,
    DomainError,
    InvalidParameterError,
    NumericalError,
    UnsupportedError,
    ValidationError,
)
from .kernels import ExpCos, ExpExp, ExpLinear, Kernel, cholesky_jitter

ILL_CONDITIONED = 1e14


# --------------------------------------------------------------------------
# designs


@dataclass(frozen=True)
class DesignSpec:
    """Ordered observations ``(t, order)``.

    Parameters
    ----------
    points : sequence of (float, int)
    label : str
    interval : (float, float), optional
        When given, all times must lie in it.
    """

    points: tuple[tuple[float, int], ...]
    label: str = ""
    interval: tuple[float, float] | None = None

    def __post_init__(self):
        pts = tuple((float(t), int(i)) for t, i in self.points)
        if not pts:
            raise ValidationError("a design needs at least one observation")
        if any(i < 0 for _, i in pts):
            raise ValidationError("derivative orders must be non-negative")
        if len(set(pts)) != len(pts):
            raise ValidationError("duplicate observations in design")
        if self.interval is not None:
            a, b = self.interval
            tol = 1e-12 * (b - a)
            if any(t < a - tol or t > b + tol for t, _ in pts):
                raise DomainError("design times must lie in the interval")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.points])

    @property
    def orders(self) -> np.ndarray:
        return np.array([i for _, i in self.points], dtype=int)

    @property
    def max_order(self) -> int:
        return int(self.orders.max())

    def __add__(self, other: "DesignSpec") -> "DesignSpec":
        return DesignSpec(self.points + other.points, self.label or other.label, self.interval)

    def to_json(self) -> dict:
        return {"points": [{"t": t, "order": i} for t, i in self.points], "label": self.label}

    @classmethod
    def from_json(cls, obj: dict, interval=None) -> "DesignSpec":
        try:
            pts = [(float(p["t"]), int(p["order"])) for p in obj["points"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed design: {exc}") from None
        return cls(tuple(pts), str(obj.get("label", "")), interval)


def equidistant(a: float, b: float, n: int) -> np.ndarray:
    if n < 2:
        raise ValidationError("need at least two equidistant points")
    t = a + (b - a) * np.arange(n) / (n - 1)
    t[-1] = b
    return t


def design_blue_nn(N: int, a: float, b: float) -> DesignSpec:
    """Values and first derivatives at ``N`` equidistant points, interleaved."""
    pts = [(t, i) for t in equidistant(a, b, N) for i in (0, 1)]
    return DesignSpec(tuple(pts), f"BLUE({N},{N})", (a, b))


def design_blue_2n2(N: int, a: float, b: float) -> DesignSpec:
    """``2N - 2`` equidistant values plus derivatives at both endpoints."""
    pts = [(t, 0) for t in equidistant(a, b, 2 * N - 2)] + [(a, 1), (b, 1)]
    return DesignSpec(tuple(pts), f"BLUE({2 * N - 2},2)", (a, b))


def design_blue_2n0(N: int, a: float, b: float) -> DesignSpec:
    """``2N`` equidistant values."""
    return DesignSpec(tuple((t, 0) for t in equidistant(a, b, 2 * N)), f"BLUE({2 * N},0)", (a, b))


def design_values_endpoint_derivatives(N: int, a: float, b: float, q: int = 1) -> DesignSpec:
    """``N`` equidistant values plus derivatives of orders ``1..q`` at both endpoints."""
    pts = [(t, 0) for t in equidistant(a, b, N)]
    pts += [(x, i) for i in range(1, q + 1) for x in (a, b)]
    return DesignSpec(tuple(pts), f"values({N})+endpoint-derivatives({q})", (a, b))


# --------------------------------------------------------------------------
# matrices and estimators


def design_matrix(drift: DriftVector, design: DesignSpec) -> np.ndarray:
    """Rows ``f^{(i)}(t)^T`` for each observation ``(t, i)``."""
    if design.max_order > drift.max_order:
        raise ValidationError("design needs derivatives beyond the drift's max_order")
    X = np.empty((design.n, drift.m))
    t, o = design.times, design.orders
    for i in np.unique(o):
        sel = o == i
        X[sel] = drift(t[sel], int(i))
    return X


def joint_covariance(kernel: Kernel, design: DesignSpec) -> np.ndarray:
    """Covariances ``d^{i+j} K(t, s) / dt^i ds^j`` of the observations."""
    t, o = design.times, design.orders
    n = design.n
    S = np.empty((n, n))
    orders = np.unique(o)
    for i in orders:
        ri = np.flatnonzero(o == i)
        for j in orders:
            rj = np.flatnonzero(o == j)
            S[np.ix_(ri, rj)] = kernel.cross(int(i), int(j), t[ri][:, None], t[rj][None, :])
    return 0.5 * (S + S.T)


@dataclass
class EstimatorReport:
    """Weights ``W`` (``theta_hat = W y``) and covariance of a linear estimator."""

    weights: np.ndarray
    covariance: np.ndarray
    kind: str
    efficiency: float | None = None
    label: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "weights": self.weights.tolist(),
            "covariance": self.covariance.tolist(),
            "efficiency": self.efficiency,
        }


def _check_rank(X: np.ndarray):
    if X.ndim != 2 or X.shape[0] < X.shape[1]:
        raise DegenerateDesignError("design has fewer observations than parameters")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DegenerateDesignError("design matrix is rank deficient")


def _sym(M):
    return 0.5 * (M + M.T)


def _invert_pd(M: np.ndarray, what: str) -> np.ndarray:
    try:
        f = cho_factor(_sym(M), lower=True)
    except LinAlgError:
        raise DegenerateDesignError(f"{what} is not positive definite") from None
    return _sym(cho_solve(f, np.eye(M.shape[0])))


def gls_solve(Sigma: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, dict]:
    """``Sigma^{-1} X`` through a Cholesky factor, one solve per column.

    Falls back to a pivoted symmetric solve, with a warning, when the factor
    indicates a condition number above ``1e14`` or Cholesky fails within the
    jitter policy.
    """
    info: dict = {"jitter": 0.0, "fallback": False}
    try:
        L, jitter = cholesky_jitter(Sigma)
    except NumericalError:
        L, jitter = None, None
    if L is not None:
        d = np.abs(np.diag(L))
        cond = float((d.max() / d.min()) ** 2) if d.min() > 0 else math.inf
        info["condition_estimate"] = cond
        info["jitter"] = jitter
        if cond <= ILL_CONDITIONED:
            return cho_solve((L, True), X), info
    warnings.warn("covariance is ill conditioned; using a pivoted symmetric solve",
                  RuntimeWarning, stacklevel=3)
    info["fallback"] = True
    try:
        return dense_solve(Sigma, X, assume_a="sym"), info
    except LinAlgError:
        raise DegenerateModelError("joint covariance is singular") from None


def discrete_blue(X: np.ndarray, Sigma: np.ndarray, label: str = "") -> EstimatorReport:
    """Generalised least squares: ``(X^T S^{-1} X)^{-1} X^T S^{-1}``."""
    X = np.asarray(X, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    _check_rank(X)
    SX, info = gls_solve(Sigma, X)
    M = X.T @ SX
    cov = _invert_pd(M, "GLS information matrix")
    W = cov @ SX.T
    return EstimatorReport(W, cov, "BLUE", label=label, diagnostics=info)


def olse(X: np.ndarray, Sigma: np.ndarray, label: str = "") -> EstimatorReport:
    """Ordinary least squares with its sandwich covariance."""
    X = np.asarray(X, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    _check_rank(X)
    XtX_inv = _invert_pd(X.T @ X, "X^T X")
    W = XtX_inv @ X.T
    cov = _sym(W @ Sigma @ W.T)
    return EstimatorReport(W, cov, "OLSE", label=label)


EFFICIENCY_MODES = ("scalar-ratio", "det-root", "det-ratio", "trace-ratio")


def efficiency(cont_cov, est_cov, mode: str = "det-ratio") -> float:
    """Scalar efficiency of an estimator relative to the continuous BLUE.

    Modes: ``scalar-ratio`` (``m = 1`` only), ``det-root``
    ``(det V_c / det V)^{1/m}``, ``det-ratio`` ``det V_c / det V`` and
    ``trace-ratio`` ``tr V_c / tr V``.
    """
    Vc = np.atleast_2d(np.asarray(cont_cov, dtype=float))
    V = np.atleast_2d(np.asarray(est_cov, dtype=float))
    if Vc.shape != V.shape or Vc.shape[0] != Vc.shape[1]:
        raise ValidationError("covariance matrices must be square with equal shapes")
    m = Vc.shape[0]
    if mode == "scalar-ratio":
        if m != 1:
            raise ValidationError("scalar-ratio efficiency needs m = 1")
        return float(Vc[0, 0] / V[0, 0])
    if mode in ("det-root", "det-ratio"):
        sc, lc = np.linalg.slogdet(Vc)
        se, le = np.linalg.slogdet(V)
        if sc <= 0 or se <= 0:
            raise DegenerateModelError("covariance matrices must be positive definite")
        log_ratio = lc - le
        return float(math.exp(log_ratio / m if mode == "det-root" else log_ratio))
    if mode == "trace-ratio":
        return float(np.trace(Vc) / np.trace(V))
    raise ValidationError(f"unknown efficiency mode {mode!r}; choose from {', '.join(EFFICIENCY_MODES)}")


# --------------------------------------------------------------------------
# AR(2)


@dataclass(frozen=True)
class AR2Spec:
    """Stationary AR(2) model ``e_j - a1 e_{j-1} - a2 e_{j-2} = innovation``."""

    a1: float
    a2: float
    N: int

    def __post_init__(self):
        a1, a2 = float(self.a1), float(self.a2)
        if not (abs(a2) < 1 and a2 + a1 < 1 and a2 - a1 < 1):
            raise InvalidParameterError(f"AR(2) coefficients ({a1}, {a2}) are not stationary")
        if self.N < 5:
            raise InvalidParameterError("AR(2) precision needs N >= 5")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def k0(self) -> float:
        return 1 + self.a1 ** 2 + self.a2 ** 2

    @property
    def k1(self) -> float:
        return -self.a1 + self.a1 * self.a2

    @property
    def k2(self) -> float:
        return -self.a2

    k11 = 1.0

    @property
    def k12(self) -> float:
        return -self.a1

    @property
    def k22(self) -> float:
        return 1 + self.a1 ** 2

    @property
    def S(self) -> float:
        """Innovation variance for unit marginal variance."""
        a1, a2 = self.a1, self.a2
        return (1 + a1 - a2) * (1 - a1 - a2) * (1 + a2) / (1 - a2)


def ar2_bands(spec: AR2Spec) -> np.ndarray:
    """Lower banded storage ``(3, N)`` of the AR(2) precision matrix."""
    N = spec.N
    diag = np.full(N, spec.k0)
    diag[[0, -1]] = spec.k11
    diag[[1, -2]] = spec.k22
    off1 = np.full(N - 1, spec.k1)
    off1[[0, -1]] = spec.k12
    off2 = np.full(N - 2, spec.k2)
    bands = np.zeros((3, N))
    bands[0] = diag
    bands[1, :-1] = off1
    bands[2, :-2] = off2
    return bands / spec.S


def ar2_precision(spec: AR2Spec, banded: bool = False) -> np.ndarray:
    """The pentadiagonal inverse covariance, dense or in lower banded storage."""
    bands = ar2_bands(spec)
    if banded:
        return bands
    N = spec.N
    P = np.diag(bands[0])
    for k in (1, 2):
        P += np.diag(bands[k, :N - k], k) + np.diag(bands[k, :N - k], -k)
    return P


def ar2_apply(spec: AR2Spec, X: np.ndarray) -> np.ndarray:
    """``Sigma^{-1} X`` using the band structure."""
    bands = ar2_bands(spec)
    X = np.asarray(X, dtype=float)
    out = bands[0][:, None] * X if X.ndim == 2 else bands[0] * X
    for k in (1, 2):
        b = bands[k, :-k]
        if X.ndim == 2:
            out[:-k] += b[:, None] * X[k:]
            out[k:] += b[:, None] * X[:-k]
        else:
            out[:-k] += b * X[k:]
            out[k:] += b * X[:-k]
    return out


def ar2_covariance_solve(spec: AR2Spec, Y: np.ndarray) -> np.ndarray:
    """``Sigma Y`` through a banded solve with the precision."""
    return solveh_banded(ar2_bands(spec), Y, lower=True)


def autocov_real_roots(p1: float, p2: float, k) -> np.ndarray:
    """``C p1^k + (1 - C) p2^k`` for distinct real roots."""
    C = (1 - p2 ** 2) * p1 / ((1 - p2 ** 2) * p1 - (1 - p1 ** 2) * p2)
    k = np.asarray(k, dtype=float)
    return C * p1 ** k + (1 - C) * p2 ** k


def autocov_complex_roots(p: float, b: float, k) -> np.ndarray:
    """``p^k (cos bk + C sin bk)`` for roots ``p e^{+-ib}``."""
    C = (1 - p ** 2) / ((1 + p ** 2) * math.tan(b))
    k = np.asarray(k, dtype=float)
    return p ** k * (np.cos(b * k) + C * np.sin(b * k))


def autocov_double_root(p: float, k) -> np.ndarray:
    """``p^k (1 + k C)`` for a double root ``p``."""
    C = (1 - p ** 2) / (1 + p ** 2)
    k = np.asarray(k, dtype=float)
    return p ** k * (1 + k * C)


def ar2_autocovariance(a1: float, a2: float, lags) -> np.ndarray:
    """Unit-variance autocovariances of a stationary AR(2), by root type."""
    AR2Spec(a1, a2, 5)
    disc = a1 ** 2 + 4 * a2
    lags = np.asarray(lags)
    scale = max(abs(a1) ** 2, abs(a2), 1e-300)
    if abs(disc) <= 1e-14 * scale:
        return autocov_double_root(a1 / 2, lags)
    if disc > 0:
        r = math.sqrt(disc)
        return autocov_real_roots((a1 + r) / 2, (a1 - r) / 2, lags)
    p = math.sqrt(-a2)
    b = math.acos(max(-1.0, min(1.0, a1 / (2 * p))))
    return autocov_complex_roots(p, b, lags)


def yule_walker_ar2(r1: float, r2: float) -> tuple[float, float]:
    """AR(2) coefficients from the first two autocorrelations."""
    if not abs(r1) < 1:
        raise InvalidParameterError("Yule-Walker needs |r1| < 1")
    a1 = r1 * (1 - r2) / (1 - r1 ** 2)
    a2 = (r2 - r1 ** 2) / (1 - r1 ** 2)
    AR2Spec(a1, a2, 5)
    return a1, a2


def car2_autocovariance(kernel: Kernel, delta: float, lags) -> np.ndarray:
    """Autocovariances of the AR(2) form matched to a CAR(2) kernel at spacing ``delta``.

    The discrete roots are ``p_j = exp(-lam_j delta)`` (real rates),
    ``p = exp(-lam delta), b = omega delta`` (oscillating) or a double root
    ``exp(-lam delta)``.
    """
    if isinstance(kernel, ExpExp):
        return autocov_real_roots(math.exp(-kernel.l1 * delta), math.exp(-kernel.l2 * delta), lags)
    if isinstance(kernel, ExpCos):
        return autocov_complex_roots(math.exp(-kernel.lam * delta), kernel.omega * delta, lags)
    if isinstance(kernel, ExpLinear):
        return autocov_double_root(math.exp(-kernel.lam * delta), lags)
    raise UnsupportedError(f"{kernel.spec} is not a CAR(2) kernel")


@dataclass(frozen=True)
class LimitRow:
    """Errors of the scaled AR(2) weights against the continuous measures at one ``N``."""

    N: int
    delta: float
    interior: float
    sum_A: float
    sum_B: float
    deriv_A: float
    deriv_B: float
    var_distance: float


def ar2_limit_check(kernel: Kernel, drift: DriftVector, N_list: Sequence[int],
                    interval=None) -> list[LimitRow]:
    """Compare AR(2) GLS weights with the continuous BLUE measures.

    For each ``N`` the AR(2) coefficients come from Yule--Walker on the
    autocovariances of the matched discrete form at ``delta = (B-A)/(N-1)``.
    With ``h_i`` the rows of ``Sigma^{-1} X`` the reported errors are

    * ``interior``: ``max_{3<=i<=N-2} |S h_i / (s_3 delta^4) - z(t_i)|``;
    * ``sum_A``, ``sum_B``: ``|h_1 + h_2 - z_A|`` and ``|h_N + h_{N-1} - z_B|``;
    * ``deriv_A``, ``deriv_B``: ``|delta h_1 + z_{1,A}|`` and ``|delta h_N - z_{1,B}|``;
    * ``var_distance``: Frobenius distance of ``(X^T Sigma^{-1} X)^{-1}`` to ``C^{-1}``.

    Norms are max-norms over the ``m`` components.
    """
    if interval is not None:
        drift = drift.with_interval(interval)
    a, b = drift.interval
    consts: SmoothQ1Constants = q1_constants(kernel, (a, b))
    sol = blue_smooth_q1(drift, kernel, consts)
    zeta0, zeta1 = sol.family[0], sol.family[1]
    zA, zB = zeta0.atom_weight(a), zeta0.atom_weight(b)
    z1A, z1B = zeta1.atom_weight(a), zeta1.atom_weight(b)
    rows = []
    for N in N_list:
        N = int(N)
        t = equidistant(a, b, N)
        delta = (b - a) / (N - 1)
        r1, r2 = car2_autocovariance(kernel, delta, [1, 2])
        spec = AR2Spec(*yule_walker_ar2(float(r1), float(r2)), N)
        X = drift(t, 0)
        H = ar2_apply(spec, X)
        z = zeta0.density(t[2:-2])
        interior = float(np.max(np.abs(spec.S * H[2:-2] / (consts.s3 * delta ** 4) - z)))
        cov = _invert_pd(X.T @ H, "AR(2) information matrix")
        rows.append(LimitRow(
            N, delta, interior,
            float(np.max(np.abs(H[0] + H[1] - zA))),
            float(np.max(np.abs(H[-1] + H[-2] - zB))),
            float(np.max(np.abs(delta * H[0] + z1A))),
            float(np.max(np.abs(delta * H[-1] - z1B))),
            float(np.linalg.norm(cov - sol.covariance)),
        ))
    return rows


# --------------------------------------------------------------------------
# sampling


def replicate_generator(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream for one replicate; independent of evaluation order."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(replicate), 0, 0]))


def sample_paths(kernel: Kernel, design: DesignSpec, drift: DriftVector, theta,
                 count: int, seed: int) -> np.ndarray:
    """Draws ``y = X theta + L xi`` of shape ``(count, n)``.

    Replicate ``r`` uses its own Philox stream keyed by ``seed`` with counter
    ``r``, so any subset of replicates can be regenerated independently.
    """
    if count < 1:
        raise ValidationError("count must be positive")
    X = design_matrix(drift, design)
    theta = np.asarray(theta, dtype=float).reshape(drift.m)
    L, _ = cholesky_jitter(joint_covariance(kernel, design))
    n = design.n
    xi = np.empty((count, n))
    for r in range(count):
        xi[r] = replicate_generator(seed, r).standard_normal(n)
    return X @ theta + xi @ L.T
