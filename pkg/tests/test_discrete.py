import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctblue.blue import solve
from ctblue.discrete import (
    AR2Spec,
    DesignSpec,
    ar2_apply,
    ar2_autocovariance,
    ar2_covariance_solve,
    ar2_limit_check,
    ar2_precision,
    car2_autocovariance,
    design_blue_2n0,
    design_blue_2n2,
    design_blue_nn,
    design_matrix,
    design_values_endpoint_derivatives,
    discrete_blue,
    efficiency,
    joint_covariance,
    olse,
    replicate_generator,
    sample_paths,
    yule_walker_ar2,
)
from ctblue.drift import parse_drift
from ctblue.errors import DegenerateDesignError, InvalidParameterError, ValidationError
from ctblue.kernels import BrownianMotion, ExpCos, ExpExp, ExpLinear, IntegratedBM, parse_kernel

IBM0 = IntegratedBM(0.0)
ONE = parse_drift("1", (1, 2))


def min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


# --------------------------------------------------------------------------
# designs and matrices


def test_design_matrix_rows():
    f = parse_drift("1,t", (1, 2))
    np.testing.assert_array_equal(design_matrix(f, DesignSpec(((1, 0), (2, 0)), "", (1, 2))), [[1, 1], [1, 2]])
    np.testing.assert_array_equal(design_matrix(f, DesignSpec(((1, 1),), "", (1, 2))), [[0, 1]])


def test_values_and_derivatives_design():
    d = design_blue_nn(3, 1.0, 2.0)
    assert d.n == 6
    np.testing.assert_array_equal(d.times, [1, 1, 1.5, 1.5, 2, 2])
    np.testing.assert_array_equal(d.orders, [0, 1, 0, 1, 0, 1])
    X = design_matrix(parse_drift("1,t", (1, 2)), d)
    np.testing.assert_array_equal(X[:, 1], [1, 1, 1.5, 1, 2, 1])


def test_other_designs():
    d = design_blue_2n2(3, 1.0, 2.0)
    np.testing.assert_allclose(d.times, [1, 4 / 3, 5 / 3, 2, 1, 2])
    np.testing.assert_array_equal(d.orders, [0, 0, 0, 0, 1, 1])
    assert design_blue_2n0(5, 1.0, 2.0).n == 10
    e = design_values_endpoint_derivatives(4, 0.0, 1.0, q=2)
    assert e.n == 8 and e.max_order == 2


def test_design_validation():
    with pytest.raises(ValidationError):
        DesignSpec(((1.0, 0), (1.0, 0)), "", (1, 2))
    with pytest.raises(ValidationError):
        DesignSpec(((2.5, 0),), "", (1, 2))


def test_design_json_round_trip():
    d = design_blue_2n2(4, 1.0, 2.0)
    assert DesignSpec.from_json(d.to_json(), (1, 2)) == d


def test_joint_covariance_examples():
    np.testing.assert_allclose(joint_covariance(BrownianMotion(), DesignSpec(((1.5, 0),), "", (1, 2))), [[1.5]])
    S = joint_covariance(IBM0, DesignSpec(((1, 0), (1, 1)), "", (1, 2)))
    np.testing.assert_allclose(S, [[1 / 3, 1 / 2], [1 / 2, 1]], atol=1e-15)
    S = joint_covariance(ExpLinear(1.0), DesignSpec(((0, 0), (0, 1)), "", (0, 1)))
    np.testing.assert_allclose(S, np.eye(2), atol=1e-15)


def test_derivative_order_beyond_smoothness():
    with pytest.raises(ValidationError):
        joint_covariance(BrownianMotion(), DesignSpec(((1, 1),), "", (1, 2)))


# --------------------------------------------------------------------------
# estimators


def test_gls_with_identity_is_least_squares(rng):
    X = rng.normal(size=(9, 3))
    gls = discrete_blue(X, np.eye(9))
    ls = olse(X, np.eye(9))
    np.testing.assert_allclose(gls.weights, np.linalg.solve(X.T @ X, X.T), atol=1e-12)
    np.testing.assert_allclose(gls.weights, ls.weights, atol=1e-12)
    np.testing.assert_allclose(ls.covariance, np.linalg.inv(X.T @ X), atol=1e-12)
    assert gls.kind == "BLUE" and ls.kind == "OLSE"


def test_rank_deficient_design():
    X = np.ones((4, 2))
    with pytest.raises(DegenerateDesignError):
        discrete_blue(X, np.eye(4))
    with pytest.raises(DegenerateDesignError):
        olse(X, np.eye(4))


def _table1(design, estimator):
    X = design_matrix(ONE, design)
    return estimator(X, joint_covariance(IBM0, design)).covariance


@pytest.mark.parametrize("N,blue6,ols6", [(3, 0.8593, 0.0732), (5, 0.9147, 0.0733), (10, 0.9570, 0.0734)])
def test_table1_entries(N, blue6, ols6):
    cont = np.array([[1 / 12]])
    d0 = design_blue_2n0(N, 1.0, 2.0)
    assert efficiency(cont, _table1(d0, discrete_blue), "scalar-ratio") == pytest.approx(blue6, abs=5e-4)
    assert efficiency(cont, _table1(d0, olse), "scalar-ratio") == pytest.approx(ols6, abs=5e-4)
    for d in (design_blue_nn(N, 1.0, 2.0), design_blue_2n2(N, 1.0, 2.0)):
        assert efficiency(cont, _table1(d, discrete_blue), "scalar-ratio") == pytest.approx(1.0, abs=1e-6)


def test_efficiency_modes():
    V = np.diag([1.0, 4.0])
    W = np.diag([2.0, 8.0])
    assert efficiency(V, W, "det-ratio") == pytest.approx(0.25)
    assert efficiency(V, W, "det-root") == pytest.approx(0.5)
    assert efficiency(V, W, "trace-ratio") == pytest.approx(0.5)
    assert efficiency([[1 / 12]], [[1 / 12]], "scalar-ratio") == 1.0
    with pytest.raises(ValidationError):
        efficiency(V, W, "scalar-ratio")
    with pytest.raises(ValidationError):
        efficiency(V, np.eye(3))
    with pytest.raises(ValidationError):
        efficiency(V, W, "max-ratio")


def test_table2_blue_nn_det_ratio():
    f = parse_drift("1,sin(3*pi*t),cos(3*pi*t)", (1, 2))
    cont = solve(IBM0, f).covariance
    d = design_blue_nn(5, 1.0, 2.0)
    V = discrete_blue(design_matrix(f, d), joint_covariance(IBM0, d)).covariance
    assert efficiency(cont, V, "det-ratio") == pytest.approx(0.92907, abs=2e-3)


# --------------------------------------------------------------------------
# randomized Loewner properties

_GRID = np.round(np.linspace(0.0, 1.0, 41), 10)
KERNELS = [ExpLinear(1.0), ExpExp(1.0, 2.0), ExpCos(1.0, 2.0), parse_kernel("ou:lambda=1.5", (0, 1)),
           parse_kernel("bm", (0, 1))]
DRIFT01 = parse_drift("1,t", (0, 1))


@st.composite
def designs(draw, q=1, min_size=3, max_size=12):
    # t = 0 is excluded: Brownian motion is degenerate there
    idx = draw(st.lists(st.integers(1, 40), min_size=min_size, max_size=max_size, unique=True))
    pts = []
    for i in sorted(idx):
        pts.append((float(_GRID[i]), 0))
        if q and draw(st.booleans()):
            pts.append((float(_GRID[i]), 1))
    return DesignSpec(tuple(pts), "random", (0.0, 1.0))


@given(st.integers(0, len(KERNELS) - 1), st.data())
def test_ols_dominates_gls(k, data):
    kernel = KERNELS[k]
    d = data.draw(designs(q=kernel.q))
    X = design_matrix(DRIFT01, d)
    S = joint_covariance(kernel, d)
    gls = discrete_blue(X, S)
    assert min_eig(olse(X, S).covariance - gls.covariance) >= -1e-9
    np.testing.assert_allclose(gls.weights @ X, np.eye(2), atol=1e-9)


@given(st.integers(0, len(KERNELS) - 1), st.data())
def test_extra_observation_never_hurts(k, data):
    kernel = KERNELS[k]
    d = data.draw(designs(q=kernel.q))
    extra = data.draw(st.tuples(st.integers(1, 40), st.integers(0, kernel.q)))
    obs = (float(_GRID[extra[0]]), extra[1])
    if obs in d.points:
        return
    bigger = d + DesignSpec((obs,), "", (0.0, 1.0))
    V1 = discrete_blue(design_matrix(DRIFT01, d), joint_covariance(kernel, d)).covariance
    V2 = discrete_blue(design_matrix(DRIFT01, bigger), joint_covariance(kernel, bigger)).covariance
    assert min_eig(V1 - V2) >= -1e-9


_CONT = {}


def _continuous(k):
    if k not in _CONT:
        _CONT[k] = solve(KERNELS[k], DRIFT01).covariance
    return _CONT[k]


# Brownian motion (last) has no continuous BLUE when A = 0
@given(st.integers(0, len(KERNELS) - 2), st.data())
def test_discrete_never_beats_continuous(k, data):
    kernel = KERNELS[k]
    d = data.draw(designs(q=kernel.q, max_size=20))
    V = discrete_blue(design_matrix(DRIFT01, d), joint_covariance(kernel, d)).covariance
    assert min_eig(V - _continuous(k)) >= -1e-9


# --------------------------------------------------------------------------
# AR(2)


def test_ar2_constants():
    s = AR2Spec(0.5, 0.2, 10)
    assert (s.k0, s.k1, s.k2, s.k11, s.k12, s.k22) == pytest.approx((1.29, -0.4, -0.2, 1.0, -0.5, 1.25))
    assert s.S == pytest.approx(0.585)


def test_ar2_white_noise():
    np.testing.assert_array_equal(ar2_precision(AR2Spec(0.0, 0.0, 7)), np.eye(7))


@pytest.mark.parametrize("a1,a2", [(0.5, 1.0), (1.2, -0.1), (-1.2, -0.1), (0.0, -1.0)])
def test_ar2_stationarity(a1, a2):
    with pytest.raises(InvalidParameterError):
        AR2Spec(a1, a2, 10)


def _stable_pairs(n, rng):
    out = []
    while len(out) < n:
        a1, a2 = rng.uniform(-2, 2), rng.uniform(-1, 1)
        # stay away from the triangle edges so the dense covariance stays well conditioned
        if abs(a2) < 0.95 and a1 + a2 < 0.95 and a2 - a1 < 0.95:
            out.append((a1, a2))
    return out


def _toeplitz_covariance(a1, a2, N):
    r = ar2_autocovariance(a1, a2, np.arange(N))
    idx = np.abs(np.arange(N)[:, None] - np.arange(N)[None, :])
    return r[idx]


def test_pentadiagonal_inverse(rng):
    for a1, a2 in _stable_pairs(20, rng):
        spec = AR2Spec(a1, a2, 100)
        Sigma = _toeplitz_covariance(a1, a2, 100)
        assert np.linalg.norm(Sigma @ ar2_precision(spec) - np.eye(100)) / 10 < 1e-10


@pytest.mark.parametrize("a1,a2", [(0.5, 0.2), (1.0, -0.25), (0.6, -0.5)])
def test_autocovariance_root_types(a1, a2):
    r = ar2_autocovariance(a1, a2, np.arange(8))
    assert r[0] == pytest.approx(1.0)
    np.testing.assert_allclose(r[2:], a1 * r[1:-1] + a2 * r[:-2], atol=1e-14)
    assert r[1] == pytest.approx(a1 / (1 - a2))


def test_banded_helpers(rng):
    spec = AR2Spec(0.7, -0.3, 30)
    X = rng.normal(size=(30, 2))
    np.testing.assert_allclose(ar2_apply(spec, X), ar2_precision(spec) @ X, atol=1e-12)
    np.testing.assert_allclose(ar2_covariance_solve(spec, X), _toeplitz_covariance(0.7, -0.3, 30) @ X, atol=1e-10)


def test_yule_walker_round_trip():
    assert yule_walker_ar2(0.0, 0.0) == (0.0, 0.0)
    r = ar2_autocovariance(0.7, -0.3, [1, 2])
    assert yule_walker_ar2(*r) == pytest.approx((0.7, -0.3))
    with pytest.raises(InvalidParameterError):
        yule_walker_ar2(1.0, 0.5)


def test_yule_walker_small_spacing_expansion():
    l1, l2 = 1.0, 2.0
    kernel = ExpExp(l1, l2)
    e1, e2 = [], []
    for delta in (0.04, 0.02, 0.01):
        a1, a2 = yule_walker_ar2(*car2_autocovariance(kernel, delta, [1, 2]))
        e1.append(abs(a1 - (2 - (l1 + l2) * delta + (l1 ** 2 + l2 ** 2) * delta ** 2 / 2)))
        e2.append(abs(a2 - (-1 + (l1 + l2) * delta - (l1 + l2) ** 2 * delta ** 2 / 2)))
    # third-order remainders shrink by about eight per halving
    for e in (e1, e2):
        assert 6 < e[0] / e[1] < 10 and 6 < e[1] / e[2] < 10


@pytest.mark.parametrize("kernel", [ExpExp(1.0, 2.0), ExpCos(1.0, 2.0), ExpLinear(1.0)])
def test_ar2_weights_approach_continuous_measure(kernel):
    rows = ar2_limit_check(kernel, parse_drift("1,t", (0, 1)), [100, 200, 400, 800])
    for name in ("interior", "sum_A", "sum_B", "var_distance"):
        vals = [getattr(r, name) for r in rows]
        assert all(x > y for x, y in zip(vals, vals[1:])), (name, vals)


def test_ar2_matern_constant_drift():
    lam = 1.0
    rows = ar2_limit_check(ExpLinear(lam), parse_drift("1", (0, 1)), [100, 200, 400])
    errs = [r.interior for r in rows]
    assert errs[1] / errs[0] <= 0.75 and errs[2] / errs[1] <= 0.75
    assert rows[-1].sum_A < 1e-2


def test_values_only_variance_limit():
    f = parse_drift("1,t", (0, 1))
    kernel = ExpLinear(1.0)
    d = DesignSpec(tuple((float(t), 0) for t in np.linspace(0, 1, 2000)), "values", (0, 1))
    V = discrete_blue(design_matrix(f, d), joint_covariance(kernel, d)).covariance
    assert np.linalg.norm(V - solve(kernel, f).covariance) < 1e-3


def test_ar2_rounding_floor_at_fine_spacing():
    # 1 - r1^2 is of order delta^2, so the fitted coefficients lose digits and
    # the AR(2) variance stops improving well before the exact GLS does
    rows = ar2_limit_check(ExpLinear(1.0), parse_drift("1,t", (0, 1)), [400, 800, 1000])
    assert rows[1].var_distance < rows[0].var_distance
    assert rows[2].var_distance < 1e-3


# --------------------------------------------------------------------------
# sampling


def test_replicate_streams_are_independent_of_order():
    a = replicate_generator(7, 3).standard_normal(4)
    replicate_generator(7, 2).standard_normal(4)
    np.testing.assert_array_equal(a, replicate_generator(7, 3).standard_normal(4))
    assert not np.array_equal(a, replicate_generator(7, 4).standard_normal(4))


def test_sampling_is_deterministic():
    d = design_blue_2n0(3, 1.0, 2.0)
    x = sample_paths(IBM0, d, ONE, [0.0], 50, seed=11)
    y = sample_paths(IBM0, d, ONE, [0.0], 50, seed=11)
    np.testing.assert_array_equal(x, y)
    assert not np.array_equal(x, sample_paths(IBM0, d, ONE, [0.0], 50, seed=12))


@pytest.fixture(scope="module")
def draws():
    d = design_blue_2n0(3, 1.0, 2.0)
    return d, sample_paths(IBM0, d, ONE, [0.0], 20000, seed=0)


def test_sample_covariance_within_bands(draws):
    d, y = draws
    n = len(y)
    S = joint_covariance(IBM0, d)
    emp = y.T @ y / n
    se = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S ** 2) / n)
    assert np.all(np.abs(emp - S) <= 3 * se)


def test_estimator_covariance_monte_carlo(draws):
    d, y = draws
    rep = discrete_blue(design_matrix(ONE, d), joint_covariance(IBM0, d))
    est = y @ rep.weights.T
    emp = float(np.mean(est[:, 0] ** 2))
    assert abs(emp - rep.covariance[0, 0]) / rep.covariance[0, 0] < 0.03
