"""Efficiency tables, convergence sweeps and Monte Carlo checks.

These functions back the command line; each returns plain rows that the
formatters below turn into CSV, JSON or aligned text.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .blue import solve
from .discrete import (
    EFFICIENCY_MODES,
    ar2_limit_check,
    design_blue_2n0,
    design_blue_2n2,
    design_blue_nn,
    design_matrix,
    design_values_endpoint_derivatives,
    discrete_blue,
    efficiency,
    joint_covariance,
    olse,
    sample_paths,
)
from .drift import parse_drift
from .errors import ValidationError
from .kernels import ExpCos, ExpExp, ExpLinear, parse_kernel

ESTIMATORS = {
    "blue-nn": (design_blue_nn, discrete_blue),
    "blue-2n2": (design_blue_2n2, discrete_blue),
    "blue-2n0": (design_blue_2n0, discrete_blue),
    "olse-2n0": (design_blue_2n0, olse),
}

TABLE_DRIFTS = {
    "table1": "1",
    "table2": "1,sin(3*pi*t),cos(3*pi*t)",
    "table3": "1,t,t^2,1/t,1/t^2",
}

DEFAULT_EFF_MODE = "det-ratio"
FORMATS = ("csv", "json", "text")


@dataclass(frozen=True)
class StudyConfig:
    """Settings shared by the table, convergence and Monte Carlo studies."""

    kernel: str = "ibm:a=0"
    drift: str = "1"
    interval: tuple[float, float] = (1.0, 2.0)
    N: tuple[int, ...] = (3, 5, 10)
    estimators: tuple[str, ...] = tuple(ESTIMATORS)
    eff_mode: str = DEFAULT_EFF_MODE
    format: str = "csv"
    seed: int = 0
    replicates: int = 20000
    theta: tuple[float, ...] | None = None

    def __post_init__(self):
        a, b = (float(x) for x in self.interval)
        if not a < b:
            raise ValidationError("interval must satisfy A < B")
        object.__setattr__(self, "interval", (a, b))
        N = tuple(int(n) for n in self.N)
        if not N or min(N) < 3:
            raise ValidationError("every N must be at least 3")
        object.__setattr__(self, "N", N)
        est = tuple(self.estimators)
        if not est:
            raise ValidationError("at least one estimator is required")
        unknown = [e for e in est if e not in ESTIMATORS]
        if unknown:
            raise ValidationError(f"unknown estimators: {', '.join(unknown)}")
        object.__setattr__(self, "estimators", est)
        if self.eff_mode not in EFFICIENCY_MODES:
            raise ValidationError(f"unknown efficiency mode {self.eff_mode!r}")
        if self.format not in FORMATS:
            raise ValidationError(f"unknown output format {self.format!r}")
        if int(self.replicates) < 1:
            raise ValidationError("replicates must be positive")
        if self.theta is not None:
            object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))

    @classmethod
    def preset(cls, name: str, **overrides) -> "StudyConfig":
        if name not in TABLE_DRIFTS:
            raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(TABLE_DRIFTS)}")
        return cls(drift=TABLE_DRIFTS[name], **overrides)

    @classmethod
    def from_json(cls, obj: dict) -> "StudyConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(obj) - allowed - {"preset"}
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        data = {k: v for k, v in obj.items() if k != "preset"}
        for key in ("interval", "N", "estimators", "theta"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        if "preset" in obj:
            return cls.preset(obj["preset"], **data)
        return cls(**data)

    def updated(self, **changes) -> "StudyConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def build(self):
        kernel = parse_kernel(self.kernel, self.interval)
        drift = parse_drift(self.drift, self.interval)
        return kernel, drift


# --------------------------------------------------------------------------
# efficiency tables


@dataclass(frozen=True)
class TableRow:
    estimator: str
    N: int
    efficiency: float
    var_or_det: float


def run_table(config: StudyConfig) -> list[TableRow]:
    """Efficiency of each estimator and ``N`` against the continuous BLUE.

    ``var_or_det`` is the estimator variance for ``m = 1`` and the
    determinant of its covariance otherwise.
    """
    kernel, drift = config.build()
    cont = solve(kernel, drift).covariance
    a, b = config.interval
    rows = []
    for name in config.estimators:
        make_design, estimator = ESTIMATORS[name]
        for N in config.N:
            design = make_design(N, a, b)
            X = design_matrix(drift, design)
            rep = estimator(X, joint_covariance(kernel, design), design.label)
            eff = efficiency(cont, rep.covariance, config.eff_mode)
            stat = float(rep.covariance[0, 0]) if drift.m == 1 else float(np.linalg.det(rep.covariance))
            rows.append(TableRow(name, N, eff, stat))
    return rows


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.10g}"


def to_csv(header: Sequence[str], rows: Sequence[Sequence], metadata: dict | None = None) -> str:
    out = io.StringIO()
    if metadata:
        out.write("# " + ", ".join(f"{k}={v}" for k, v in metadata.items()) + "\n")
    out.write(",".join(header) + "\n")
    for r in rows:
        out.write(",".join(_fmt(x) for x in r) + "\n")
    return out.getvalue()


def to_text(header: Sequence[str], rows: Sequence[Sequence], metadata: dict | None = None) -> str:
    cells = [list(header)] + [[_fmt(x) for x in r] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = []
    if metadata:
        lines += [f"{k}: {v}" for k, v in metadata.items()]
    for c in cells:
        lines.append("  ".join(s.rjust(w) for s, w in zip(c, widths)))
    return "\n".join(lines) + "\n"


def to_json_text(header: Sequence[str], rows: Sequence[Sequence], metadata: dict | None = None) -> str:
    obj = {"metadata": metadata or {}, "rows": [dict(zip(header, map(_jsonable, r))) for r in rows]}
    return json.dumps(obj, indent=2) + "\n"


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


FORMATTERS = {"csv": to_csv, "text": to_text, "json": to_json_text}

TABLE_HEADER = ("estimator", "N", "efficiency", "var_or_det")


def format_table(rows: Sequence[TableRow], config: StudyConfig) -> str:
    meta = {"eff_mode": config.eff_mode, "kernel": config.kernel,
            "drift": config.drift, "interval": f"{config.interval[0]:g};{config.interval[1]:g}"}
    data = [(r.estimator, r.N, r.efficiency, r.var_or_det) for r in rows]
    return FORMATTERS[config.format](TABLE_HEADER, data, meta)


# --------------------------------------------------------------------------
# convergence


DESIGNS = {
    "endpoint-derivatives": None,
    "blue-nn": design_blue_nn,
    "blue-2n2": design_blue_2n2,
    "blue-2n0": design_blue_2n0,
}


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    var_distance: float
    efficiency: float
    ar2: dict = field(default_factory=dict)


def run_convergence(kernel_spec: str, drift_spec: str, interval, N_list: Sequence[int],
                    design: str = "endpoint-derivatives", eff_mode: str = DEFAULT_EFF_MODE,
                    ar2: bool | None = None) -> list[ConvergenceRow]:
    """Distance of discrete BLUE covariances to the continuous one as ``N`` grows.

    With ``design="endpoint-derivatives"`` the designs are ``N`` equidistant
    values plus endpoint derivatives up to the kernel's smoothness.  For
    CAR(2) kernels the AR(2) weight errors are added unless ``ar2`` is false.
    """
    if design not in DESIGNS:
        raise ValidationError(f"unknown design {design!r}; choose from {', '.join(DESIGNS)}")
    interval = tuple(float(x) for x in interval)
    kernel = parse_kernel(kernel_spec, interval)
    drift = parse_drift(drift_spec, interval)
    cont = solve(kernel, drift).covariance
    a, b = interval
    car2 = isinstance(kernel, (ExpExp, ExpCos, ExpLinear))
    use_ar2 = car2 if ar2 is None else (ar2 and car2)
    limit = {}
    if use_ar2:
        limit = {r.N: r for r in ar2_limit_check(kernel, drift, [n for n in N_list if n >= 5])}
    rows = []
    for N in N_list:
        N = int(N)
        if DESIGNS[design] is None:
            d = design_values_endpoint_derivatives(N, a, b, kernel.q)
        else:
            d = DESIGNS[design](N, a, b)
        rep = discrete_blue(design_matrix(drift, d), joint_covariance(kernel, d))
        dist = float(np.linalg.norm(rep.covariance - cont))
        eff = efficiency(cont, rep.covariance, eff_mode)
        extra = {}
        if N in limit:
            r = limit[N]
            extra = {"ar2_interior": r.interior, "ar2_sum_A": r.sum_A, "ar2_sum_B": r.sum_B,
                     "ar2_deriv_A": r.deriv_A, "ar2_deriv_B": r.deriv_B}
        rows.append(ConvergenceRow(N, dist, eff, extra))
    return rows


def format_convergence(rows: Sequence[ConvergenceRow], fmt: str, metadata: dict) -> str:
    extra_keys = sorted({k for r in rows for k in r.ar2})
    header = ["N", "var_distance", "efficiency"] + extra_keys
    data = [[r.N, r.var_distance, r.efficiency] + [r.ar2.get(k, math.nan) for k in extra_keys]
            for r in rows]
    return FORMATTERS[fmt](header, data, metadata)


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MonteCarloReport:
    seed: int
    replicates: int
    estimator: str
    N: int
    theta: list
    mean: list
    standard_error: list
    mean_z: list
    empirical_cov: list
    closed_cov: list
    relative_error: list

    def to_json(self) -> dict:
        return asdict(self)

    def max_relative_error(self) -> float:
        return float(np.max(self.relative_error))


def run_monte_carlo(config: StudyConfig) -> MonteCarloReport:
    """Empirical covariance of an estimator from seeded sample paths.

    Uses the first estimator and the first ``N`` of the configuration.
    Relative errors are ``|emp - cov| / sqrt(cov_ii cov_jj)`` per entry.
    """
    kernel, drift = config.build()
    name = config.estimators[0]
    N = config.N[0]
    make_design, estimator = ESTIMATORS[name]
    a, b = config.interval
    design = make_design(N, a, b)
    X = design_matrix(drift, design)
    Sigma = joint_covariance(kernel, design)
    rep = estimator(X, Sigma, design.label)
    theta = np.ones(drift.m) if config.theta is None else np.asarray(config.theta, dtype=float)
    if theta.shape != (drift.m,):
        raise ValidationError("theta must have one entry per drift element")
    draws = sample_paths(kernel, design, drift, theta, config.replicates, config.seed)
    est = draws @ rep.weights.T
    mean = est.mean(axis=0)
    emp = np.atleast_2d(np.cov(est, rowvar=False))
    cov = rep.covariance
    se = np.sqrt(np.diag(cov) / config.replicates)
    scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    rel = np.abs(emp - cov) / scale
    return MonteCarloReport(
        config.seed, config.replicates, name, N, theta.tolist(), mean.tolist(), se.tolist(),
        ((mean - theta) / se).tolist(), emp.tolist(), cov.tolist(), rel.tolist())
