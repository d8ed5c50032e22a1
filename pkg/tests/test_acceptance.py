"""Acceptance checks, one per criterion.

Each ``check_k`` returns ``(ok, detail)``.  Under pytest the lines are
printed and collected into the terminal summary; run this file directly to
print them without pytest.
"""

import time

import numpy as np
import pytest

from ctblue.blue import (
    RESIDUAL_NODES,
    blue_integrated_bm,
    blue_integrated_triangular,
    blue_transfer_integrated,
    blue_triangular,
    blue_twice_integrated_bm,
    residual_sup,
    solve,
    twice_integrated_bm_family,
)
from ctblue.discrete import (
    AR2Spec,
    DesignSpec,
    ar2_autocovariance,
    ar2_limit_check,
    ar2_precision,
    design_matrix,
    discrete_blue,
    joint_covariance,
    olse,
)
from ctblue.drift import DriftVector, parse_drift
from ctblue.kernels import (
    Car3,
    ExpCos,
    ExpExp,
    ExpLinear,
    Exponential,
    IntegratedBM,
    TwiceIntegratedBM,
    Triangular,
    parse_kernel,
)
from ctblue.measures import (
    DriftDensity,
    MeasureFamily,
    SignedVectorMeasure,
    apply_kernel,
    c_matrix,
    canonicalize,
    combine_solutions,
)
from ctblue.study import StudyConfig, run_convergence, run_monte_carlo, run_table

SEED = 20240601

REFERENCE = {
    "table1": {
        "blue-nn": (1, 1, 1), "blue-2n2": (1, 1, 1),
        "blue-2n0": (0.8593, 0.9147, 0.9570), "olse-2n0": (0.0732, 0.0733, 0.0734),
    },
    "table2": {
        "blue-nn": (0.41246, 0.92907, 0.99680), "blue-2n2": (0.45573, 0.98706, 0.99972),
        "blue-2n0": (0.47796, 0.77195, 0.89641), "olse-2n0": (0.00113, 0.00137, 0.00218),
    },
    "table3": {
        "blue-nn": (0.69608, 0.95988, 0.99791), "blue-2n2": (0.86903, 0.99379, 0.99981),
        "blue-2n0": (0.10040, 0.33338, 0.62529), "olse-2n0": (0.08873, 0.14103, 0.11890),
    },
}


def min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def _table_errors(preset, mode):
    rows = run_table(StudyConfig.preset(preset, eff_mode=mode))
    got = {(r.estimator, r.N): r.efficiency for r in rows}
    return got, {(e, N): abs(got[e, N] - v)
                 for e, vals in REFERENCE[preset].items() for N, v in zip((3, 5, 10), vals)}


# --------------------------------------------------------------------------


def check_1():
    start = time.perf_counter()
    _, err = _table_errors("table1", "scalar-ratio")
    elapsed = time.perf_counter() - start
    ones = max(err[e, N] for e in ("blue-nn", "blue-2n2") for N in (3, 5, 10))
    rest = max(err[e, N] for e in ("blue-2n0", "olse-2n0") for N in (3, 5, 10))
    ok = ones <= 1e-6 and rest <= 5e-4 and elapsed < 10
    return ok, f"table1 preset: unit rows off by {ones:.1e}, other rows by {rest:.1e}, {elapsed:.2f} s"


def check_2():
    worst = {}
    for mode in ("det-root", "det-ratio"):
        worst[mode] = max(max(_table_errors(p, mode)[1].values()) for p in ("table2", "table3"))
    ok = worst["det-ratio"] <= 2e-3
    note = (f"det-ratio max error {worst['det-ratio']:.1e} over 24 entries; "
            f"det-root fails with {worst['det-root']:.2f}")
    return ok, note


def check_3():
    cases = [
        ("triangular:lambda=0.8", "1,t,t^2", (0, 1)),
        ("lindrift:l1=2,l2=1", "1,t", (0, 0.5)),
        ("expexp:l1=1,l2=2", "1,t,t^2", (0, 1)),
        ("expcos:lambda=1,omega=2", "1,t,t^2", (0, 1)),
        ("matern32:lambda=1", "1,t,t^2", (0, 1)),
        ("ibm:a=0", "1,t,t^2,1/t,1/t^2", (1, 2)),
        ("ibm:a=0.5", "1,t,t^2,1/t,1/t^2", (1, 2)),
        ("itri:lambda=0.5", "1,t", (1, 2)),
        ("tibm", "1,t", (1, 2)),
        ("car3:l1=1,l2=2,l3=3", "1,t", (1, 2)),
    ]
    worst, name = 0.0, ""
    for spec, drift, iv in cases:
        kernel = parse_kernel(spec, iv)
        f = parse_drift(drift, iv)
        sol = solve(kernel, f)
        res = residual_sup(sol.family, kernel, f, RESIDUAL_NODES)
        if res >= worst:
            worst, name = res, spec
    return worst < 1e-8, f"{len(cases)} constructions, largest residual {worst:.1e} ({name})"


def check_4():
    f = parse_drift("1", (1, 2))
    sol = blue_twice_integrated_bm(f)
    atoms = [c.atom_weight(1.0)[0] for c in sol.family]
    flipped = twice_integrated_bm_family(f, 1.0)
    res_p = residual_sup(flipped, TwiceIntegratedBM(), f)
    C_p = c_matrix(flipped, f)[0, 0]
    ok = (np.allclose(atoms, [720, -360, 60], rtol=1e-12) and abs(sol.C[0, 0] - 720) < 1e-9
          and sol.residual_sup < 1e-10 and res_p >= 0.1 and C_p < 0)
    return ok, (f"atoms {atoms[0]:.6g}, {atoms[1]:.6g}, {atoms[2]:.6g}; C={sol.C[0, 0]:.6g}; "
                f"residual {sol.residual_sup:.1e}; opposite sign residual {res_p:.3g}, C={C_p:.3g}")


def _family_gap(fa, fb, grid):
    gap = 0.0
    for ca, cb in zip(fa, fb):
        for t in np.concatenate([ca.locations, cb.locations]):
            gap = max(gap, float(np.max(np.abs(ca.atom_weight(t) - cb.atom_weight(t)))))
        da = ca.density(grid) if ca.density is not None else np.zeros((grid.size, ca.m))
        db = cb.density(grid) if cb.density is not None else np.zeros((grid.size, cb.m))
        gap = max(gap, float(np.max(np.abs(da - db))))
    return gap


def check_5():
    iv = (1.0, 2.0)
    f = parse_drift("1,t", iv)
    F = f.antiderivative(0.0)
    grid = np.linspace(*iv, 41)
    gaps = []
    base = solve(parse_kernel("bm", iv), f)
    out = blue_transfer_integrated(base, blue_integrated_bm(0.0, parse_drift("1", iv)).family, a=0.0)
    direct = blue_integrated_bm(0.0, F)
    gaps.append(max(_family_gap(out.family, direct.family, grid),
                    float(np.max(np.abs(out.covariance - direct.covariance)))))
    lam = 0.5
    base = blue_triangular(lam, f)
    eta = blue_integrated_triangular(lam, parse_drift("1", iv)).family
    out = blue_transfer_integrated(base, eta, kernel=Triangular(lam), a=0.0)
    direct = blue_integrated_triangular(lam, F)
    gaps.append(max(_family_gap(out.family, direct.family, grid),
                    float(np.max(np.abs(out.covariance - direct.covariance)))))
    at_A = blue_transfer_integrated(solve(parse_kernel("bm", iv), f), None, a=iv[0])
    c_zero = bool(np.all(at_A.extras["c"] == 0.0))
    ok = max(gaps) <= 1e-9 and c_zero
    return ok, f"BM gap {gaps[0]:.1e}, triangular gap {gaps[1]:.1e}, c=0 at a=A: {c_zero}"


def check_6():
    Ns = [100, 200, 400, 800, 1600, 2000]
    rows = run_convergence("matern32:lambda=1", "1,t", (0, 1), Ns, ar2=False)
    d = {r.N: r.var_distance for r in rows}
    ratios = [d[2 * n] / d[n] for n in (100, 200, 400, 800)]
    ok = d[2000] <= 1e-3 and max(ratios) <= 0.75
    return ok, f"distance {d[2000]:.2e} at N=2000, doubling ratios {', '.join(f'{r:.3f}' for r in ratios)}"


def check_7():
    Ns = [100, 200, 400, 800]
    f = parse_drift("1,t", (0, 1))
    ok, parts = True, []
    for kernel in (ExpExp(1.0, 2.0), ExpCos(1.0, 2.0), ExpLinear(1.0)):
        rows = ar2_limit_check(kernel, f, Ns)
        for name in ("interior", "sum_A", "sum_B"):
            vals = [getattr(r, name) for r in rows]
            ok &= all(x > y for x, y in zip(vals, vals[1:]))
        parts.append(f"{kernel.family} interior {rows[0].interior:.1e}->{rows[-1].interior:.1e}")
    return ok, "; ".join(parts)


def _stable_pairs(n, rng):
    out = []
    while len(out) < n:
        a1, a2 = rng.uniform(-2, 2), rng.uniform(-1, 1)
        if abs(a2) < 0.95 and a1 + a2 < 0.95 and a2 - a1 < 0.95:
            out.append((a1, a2))
    return out


def check_8():
    rng = np.random.default_rng(SEED)
    N = 100
    idx = np.abs(np.arange(N)[:, None] - np.arange(N)[None, :])
    worst = 0.0
    for a1, a2 in _stable_pairs(20, rng):
        Sigma = ar2_autocovariance(a1, a2, np.arange(N))[idx]
        P = ar2_precision(AR2Spec(a1, a2, N))
        worst = max(worst, float(np.linalg.norm(Sigma @ P - np.eye(N)) / np.sqrt(N)))
    return worst <= 1e-10, f"20 stable pairs, largest relative defect {worst:.1e}"


def check_9():
    rep = run_monte_carlo(StudyConfig(N=(3,), estimators=("blue-2n0",), seed=0, replicates=20000,
                                      theta=(1.0,)))
    z = np.abs(np.array(rep.mean) - rep.theta) / np.array(rep.standard_error)
    ok = rep.max_relative_error() <= 0.03 and float(z.max()) <= 3
    return ok, f"relative covariance error {rep.max_relative_error():.2%}, mean off by {z.max():.2f} SE"


# criterion 10: randomized property suites


def _random_kernel(rng):
    k = int(rng.integers(0, 6))
    if k == 0:
        l1 = rng.uniform(0.5, 2)
        return ExpExp(l1, l1 + rng.uniform(0.3, 2)), (0.0, 1.0)
    if k == 1:
        return ExpCos(rng.uniform(0.5, 2), rng.uniform(0.5, 3)), (0.0, 1.0)
    if k == 2:
        return ExpLinear(rng.uniform(0.5, 2)), (0.0, 1.0)
    if k == 3:
        return Exponential(rng.uniform(0.3, 2)), (0.0, 1.0)
    if k == 4:
        return IntegratedBM(rng.uniform(0, 0.9)), (1.0, 2.0)
    l1 = rng.uniform(0.5, 1.5)
    l2 = l1 + rng.uniform(0.3, 1)
    return Car3(l1, l2, l2 + rng.uniform(0.3, 1)), (1.0, 2.0)


def _random_drift(rng, interval, m=2, degree=2):
    coeffs = rng.normal(size=(m, degree + 1))
    return DriftVector([" + ".join(f"({float(c)!r})*t^{k}" for k, c in enumerate(row)) for row in coeffs], interval)


def _random_design(rng, kernel, interval, n=8):
    a, b = interval
    grid = a + (b - a) * np.arange(1, 41) / 40
    times = np.sort(rng.choice(grid, size=n, replace=False))
    pts = [(float(t), 0) for t in times]
    if kernel.q >= 1:
        pts += [(float(t), 1) for t in times[rng.random(n) < 0.4]]
    return DesignSpec(tuple(pts), "random", interval)


def _suite_solutions(rng, count):
    out = []
    while len(out) < count:
        kernel, iv = _random_kernel(rng)
        f = _random_drift(rng, iv)
        if np.linalg.cond(c_matrix_probe(f)) > 1e6:
            continue
        out.append((kernel, f, solve(kernel, f)))
    return out


def c_matrix_probe(f):
    t = np.linspace(*f.interval, 9)
    X = f(t, 0)
    return X.T @ X


def check_10():
    rng = np.random.default_rng(SEED)
    n = 20
    sols = _suite_solutions(rng, n)
    unb = max(float(np.max(np.abs(c_matrix(s.normalized(), f) - np.eye(f.m)))) for _, f, s in sols)
    sym = max(float(np.linalg.norm(s.C - s.C.T) / np.linalg.norm(s.C)) for _, _, s in sols)

    gls_gap = np.inf
    cont_gap = np.inf
    for kernel, f, s in sols:
        d = _random_design(rng, kernel, f.interval)
        X = design_matrix(f, d)
        S = joint_covariance(kernel, d)
        V = discrete_blue(X, S).covariance
        gls_gap = min(gls_gap, min_eig(olse(X, S).covariance - V))
        cont_gap = min(cont_gap, min_eig(V - s.covariance))

    p3 = 0.0
    for kernel, f, s in sols:
        while True:
            L = np.eye(2) + 0.5 * rng.normal(size=(2, 2))
            if np.linalg.cond(L) < 20:
                break
        Li = np.linalg.inv(L)
        moved = solve(kernel, f.transform(L))
        p3 = max(p3, float(np.max(np.abs(moved.covariance - Li.T @ s.covariance @ Li))))

    p5 = 0.0
    for kernel, f, s in sols:
        g = _random_drift(rng, f.interval)
        eta = solve(kernel, g).family
        try:
            comb = combine_solutions(s.family, eta, f, g)
        except ArithmeticError:
            continue
        direct = solve(kernel, f + g)
        grid = np.linspace(*f.interval, 11)
        p5 = max(p5, float(np.max(np.abs(comb.C - direct.C))),
                 float(np.max(np.abs(apply_kernel(comb.family, kernel, grid)
                                     - apply_kernel(direct.family, kernel, grid)))))

    canon = 0.0
    iv = (1.0, 2.0)
    base = blue_integrated_bm(0.0, parse_drift("1,t", iv))
    for _ in range(n):
        phi = DriftDensity(_random_drift(rng, iv, degree=3), {0: 1.0})
        X = MeasureFamily([SignedVectorMeasure.zero(iv, 2), SignedVectorMeasure((), phi, iv, 2)])
        Y = canonicalize(X, 1, phi)
        W = canonicalize(base.family + X + (-Y), 1, phi)
        canon = max(canon, float(np.max(np.abs(c_matrix(W, base.drift) - base.C))),
                    residual_sup(W, base.kernel, base.drift) - base.residual_sup)

    ok = (unb <= 1e-10 and sym <= 1e-9 and gls_gap >= -1e-9 and cont_gap >= -1e-9
          and p3 <= 1e-9 and p5 <= 1e-9 and canon <= 1e-9)
    detail = (f"{n} instances each: unbiasedness {unb:.1e}, C symmetry {sym:.1e}, "
              f"min eig OLSE-BLUE {gls_gap:.1e}, discrete-continuous {cont_gap:.1e}, "
              f"reparameterisation {p3:.1e}, additivity {p5:.1e}, canonicalisation {canon:.1e}")
    return ok, detail


CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9, check_10]


@pytest.mark.parametrize("k", range(1, 11))
def test_criterion(k, report):
    ok, detail = CHECKS[k - 1]()
    assert report(k, ok, detail), detail


if __name__ == "__main__":
    import sys

    failed = 0
    for k, check in enumerate(CHECKS, 1):
        ok, detail = check()
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    sys.exit(1 if failed else 0)
