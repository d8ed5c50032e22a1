"""Command line interface: ``ctblue solve|verify|table|convergence|mc``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .blue import RESIDUAL_NODES, solution_from_json, solve, verify_wiener_hopf
from .discrete import EFFICIENCY_MODES
from .drift import parse_drift
from .errors import NumericalError, ValidationError
from .kernels import parse_kernel
from .study import (
    DESIGNS,
    ESTIMATORS,
    FORMATS,
    TABLE_DRIFTS,
    StudyConfig,
    format_convergence,
    format_table,
    run_convergence,
    run_monte_carlo,
    run_table,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _interval(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("interval must look like A,B") from None
    return a, b


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args) -> StudyConfig:
    base = StudyConfig()
    if getattr(args, "config", None):
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config: {exc}") from None
        base = StudyConfig.from_json(obj)
    preset = getattr(args, "preset", None)
    if preset:
        base = base.updated(drift=TABLE_DRIFTS[preset], kernel="ibm:a=0", interval=(1.0, 2.0))
    return base.updated(
        kernel=getattr(args, "kernel", None),
        drift=getattr(args, "drift", None),
        interval=getattr(args, "interval", None),
        N=getattr(args, "N", None),
        estimators=getattr(args, "estimators", None),
        eff_mode=getattr(args, "eff_mode", None),
        format=getattr(args, "format", None),
        seed=getattr(args, "seed", None),
        replicates=getattr(args, "replicates", None),
        theta=getattr(args, "theta", None),
    )


def _matrix_text(M) -> str:
    return "\n".join("  " + " ".join(f"{x: .10g}" for x in row) for row in np.atleast_2d(M))


# --------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    cfg = _config(args)
    kernel = parse_kernel(cfg.kernel, cfg.interval)
    drift = parse_drift(cfg.drift, cfg.interval)
    sol = solve(kernel, drift)
    obj = sol.to_json()
    if args.out:
        Path(args.out).write_text(json.dumps(obj, indent=2) + "\n")
    if cfg.format == "json" and not args.out:
        sys.stdout.write(json.dumps(obj, indent=2) + "\n")
    else:
        print(f"kernel: {sol.kernel_spec}")
        print(f"drift: {sol.drift_spec}")
        print(f"method: {sol.method}")
        print(f"residual_sup: {sol.residual_sup:.3e}")
        print("covariance:")
        print(_matrix_text(sol.covariance))
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        obj = json.loads(Path(args.solution).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read solution: {exc}") from None
    sol = solution_from_json(obj)
    rep = verify_wiener_hopf(sol, grid_size=args.grid)
    print(f"grid_size: {rep.grid_size}")
    print(f"residual_sup: {rep.residual_sup:.3e}")
    print(f"normalized_residual: {rep.normalized_residual:.3e}")
    print(f"unbiasedness_defect: {rep.unbiasedness_defect:.3e}")
    print(f"symmetry_defect: {rep.symmetry_defect:.3e}")
    print(f"inverse_defect: {rep.inverse_defect:.3e}")
    print(f"tolerance: {rep.tolerance:g}")
    print("status: " + ("ok" if rep.passed else "FAILED"))
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def cmd_table(args) -> int:
    cfg = _config(args)
    _emit(format_table(run_table(cfg), cfg), args.out)
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _config(args)
    rows = run_convergence(cfg.kernel, cfg.drift, cfg.interval, cfg.N, args.design, cfg.eff_mode)
    meta = {"kernel": cfg.kernel, "drift": cfg.drift,
            "interval": f"{cfg.interval[0]:g};{cfg.interval[1]:g}", "design": args.design,
            "eff_mode": cfg.eff_mode}
    _emit(format_convergence(rows, cfg.format, meta), args.out)
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = _config(args)
    if args.estimators is None and not args.config:
        cfg = cfg.updated(estimators=("blue-2n0",))
    rep = run_monte_carlo(cfg)
    if cfg.format == "json":
        _emit(json.dumps(rep.to_json(), indent=2) + "\n", args.out)
        return EXIT_OK
    lines = [
        f"seed: {rep.seed}",
        f"replicates: {rep.replicates}",
        f"estimator: {rep.estimator} N={rep.N}",
        "theta: " + " ".join(f"{x:.10g}" for x in rep.theta),
        "mean: " + " ".join(f"{x:.10g}" for x in rep.mean),
        "standard_error: " + " ".join(f"{x:.4g}" for x in rep.standard_error),
        "closed_form_covariance:", _matrix_text(rep.closed_cov),
        "empirical_covariance:", _matrix_text(rep.empirical_cov),
        f"max_relative_error: {rep.max_relative_error():.4g}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common(p, *, table=False):
    p.add_argument("--config", help="JSON study configuration; flags override its fields")
    p.add_argument("--kernel", help="kernel spec, e.g. matern32:lambda=1")
    p.add_argument("--drift", help='comma-separated drift, e.g. "1,t,t^2"')
    p.add_argument("--interval", type=_interval, help="A,B")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--out", help="output file (default: stdout)")
    if table:
        p.add_argument("--N", type=_ints, help="comma-separated N values")
        p.add_argument("--eff-mode", dest="eff_mode", choices=EFFICIENCY_MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctblue", description="Continuous-time BLUE construction and studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="construct and verify a continuous BLUE")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="re-check a saved solution")
    p.add_argument("solution", help="solution JSON written by solve")
    p.add_argument("--grid", type=int, default=RESIDUAL_NODES, help="number of Chebyshev nodes")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("table", help="efficiency table of discrete estimators")
    _common(p, table=True)
    p.add_argument("--preset", choices=sorted(TABLE_DRIFTS))
    p.add_argument("--estimators", type=_names, help=", ".join(ESTIMATORS))
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("convergence", help="discrete covariance versus the continuous limit")
    _common(p, table=True)
    p.add_argument("--design", choices=sorted(DESIGNS), default="endpoint-derivatives")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("mc", help="Monte Carlo check of an estimator covariance")
    _common(p, table=True)
    p.add_argument("--preset", choices=sorted(TABLE_DRIFTS))
    p.add_argument("--estimators", type=_names, help="first entry is used")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--theta", type=_floats, help="true parameter, comma-separated")
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
