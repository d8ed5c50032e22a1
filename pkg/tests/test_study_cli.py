import json

import numpy as np
import pytest

from ctblue.cli import main
from ctblue.errors import ValidationError
from ctblue.study import (
    StudyConfig,
    format_table,
    run_convergence,
    run_monte_carlo,
    run_table,
)

REFERENCE = {
    "table1": {"blue-2n0": (0.8593, 0.9147, 0.9570), "olse-2n0": (0.0732, 0.0733, 0.0734)},
    "table2": {"blue-nn": (0.41246, 0.92907, 0.99680)},
    "table3": {"olse-2n0": (0.08873, 0.14103, 0.11890)},
}


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def covariance_lines(out):
    lines = out.splitlines()
    return [float(x) for line in lines[lines.index("covariance:") + 1:] for x in line.split()]


# --------------------------------------------------------------------------
# solve and verify


def test_solve_integrated_bm(capsys):
    code, out, _ = run(["solve", "--kernel", "ibm:a=0", "--interval", "1,2", "--drift", "1"], capsys)
    assert code == 0
    assert covariance_lines(out)[0] == pytest.approx(1 / 12, rel=1e-9)


def test_solve_matern(capsys):
    code, out, _ = run(["solve", "--kernel", "matern32:lambda=1", "--interval", "0,1", "--drift", "1"], capsys)
    assert code == 0
    assert covariance_lines(out)[0] == pytest.approx(0.8, rel=1e-9)


@pytest.mark.parametrize("argv", [
    ["solve", "--kernel", "nosuch", "--interval", "0,1", "--drift", "1"],
    ["solve", "--kernel", "bm", "--interval", "1,2", "--drift", "foo(t)"],
    ["solve", "--kernel", "bm", "--interval", "2,1", "--drift", "1"],
    ["solve", "--interval", "oops"],
    ["table", "--preset", "table9"],
])
def test_invalid_input_exits_one(argv, capsys):
    code = None
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    _, err = capsys.readouterr()
    assert code == 1
    assert err.strip()


def test_numerical_failure_exits_two(capsys):
    # Brownian motion observed at t = 0 has a singular joint covariance
    code, _, err = run(["mc", "--kernel", "bm", "--interval", "0,1", "--drift", "1", "--N", "3",
                        "--replicates", "1000"], capsys)
    assert code == 2 and "numerical failure" in err


@pytest.fixture
def saved(tmp_path, capsys):
    path = tmp_path / "ibm.json"
    code, out, _ = run(["solve", "--kernel", "ibm:a=0", "--interval", "1,2", "--drift", "1,t,t^2",
                        "--out", str(path)], capsys)
    assert code == 0
    return path, out


def test_verify_fresh_solution(saved, capsys):
    path, _ = saved
    code, out, _ = run(["verify", str(path)], capsys)
    assert code == 0 and "status: ok" in out
    fields = dict(line.split(": ", 1) for line in out.splitlines())
    for key in ("residual_sup", "unbiasedness_defect", "symmetry_defect", "inverse_defect"):
        assert float(fields[key]) < 1e-8


def test_verify_round_trip_residual(saved, capsys):
    path, out = saved
    solved = float(dict(line.split(": ", 1) for line in out.splitlines() if ": " in line)["residual_sup"])
    recorded = json.loads(path.read_text())["residual_sup"]
    assert abs(float(f"{recorded:.3e}") - solved) <= 1e-12 + 1e-3 * solved
    from ctblue.blue import solution_from_json, verify_wiener_hopf
    rep = verify_wiener_hopf(solution_from_json(json.loads(path.read_text())))
    assert abs(rep.residual_sup - recorded) <= 1e-12


def test_verify_corrupted_atom(saved, capsys):
    path, _ = saved
    obj = json.loads(path.read_text())
    atom = obj["components"][0]["atoms"][0]
    atom["w"] = [w + 0.5 for w in atom["w"]]
    path.write_text(json.dumps(obj))
    code, out, _ = run(["verify", str(path)], capsys)
    assert code == 2 and "FAILED" in out


def test_verify_malformed_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code, _, err = run(["verify", str(path)], capsys)
    assert code == 1 and err


def test_verify_coarse_grid_is_subset(saved, capsys):
    path, _ = saved
    res = {}
    for n in (21, 201):
        _, out, _ = run(["verify", str(path), "--grid", str(n)], capsys)
        res[n] = float(dict(line.split(": ", 1) for line in out.splitlines())["residual_sup"])
    assert res[21] <= res[201] + 1e-12


def test_solve_json_format(capsys):
    code, out, _ = run(["solve", "--kernel", "bm", "--interval", "1,2", "--drift", "1", "--format", "json"],
                       capsys)
    obj = json.loads(out)
    assert code == 0 and obj["covariance"] == [[1.0]]


# --------------------------------------------------------------------------
# tables


@pytest.mark.parametrize("preset", sorted(REFERENCE))
def test_table_presets(preset):
    rows = run_table(StudyConfig.preset(preset))
    assert len(rows) == 12
    got = {(r.estimator, r.N): r.efficiency for r in rows}
    tol = 5e-4 if preset == "table1" else 2e-3
    for est, values in REFERENCE[preset].items():
        for N, value in zip((3, 5, 10), values):
            assert got[est, N] == pytest.approx(value, abs=tol)
    if preset == "table1":
        for est in ("blue-nn", "blue-2n2"):
            for N in (3, 5, 10):
                assert got[est, N] == pytest.approx(1.0, abs=1e-6)


def test_table_output_is_reproducible(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["table", "--preset", "table2", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0].startswith("# eff_mode=det-ratio")
    assert lines[1] == "estimator,N,efficiency,var_or_det"
    assert len(lines) == 14
    _, N, eff, var = lines[2].split(",")
    assert len(eff.replace(".", "").lstrip("0")) <= 10


@pytest.mark.parametrize("fmt", ["json", "text"])
def test_table_formats(fmt, capsys):
    code, out, _ = run(["table", "--preset", "table1", "--format", fmt, "--N", "3"], capsys)
    assert code == 0
    if fmt == "json":
        obj = json.loads(out)
        assert obj["metadata"]["eff_mode"] == "det-ratio"
        assert len(obj["rows"]) == 4
    else:
        assert "eff_mode: det-ratio" in out


def test_table_eff_mode_recorded():
    cfg = StudyConfig.preset("table2", eff_mode="det-root", N=(3,))
    text = format_table(run_table(cfg), cfg)
    assert text.startswith("# eff_mode=det-root")


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "table1", "N": [3], "estimators": ["olse-2n0"]}))
    code, out, _ = run(["table", "--config", str(cfg)], capsys)
    assert code == 0
    row = out.splitlines()[2].split(",")
    assert row[0] == "olse-2n0" and float(row[2]) == pytest.approx(0.0732, abs=5e-4)
    code, out, _ = run(["table", "--config", str(cfg), "--N", "5"], capsys)
    assert out.splitlines()[2].split(",")[1] == "5"


def test_config_validation():
    with pytest.raises(ValidationError):
        StudyConfig(N=(2,))
    with pytest.raises(ValidationError):
        StudyConfig(estimators=())
    with pytest.raises(ValidationError):
        StudyConfig(interval=(2, 1))
    with pytest.raises(ValidationError):
        StudyConfig.from_json({"colour": "red"})


# --------------------------------------------------------------------------
# convergence


def test_convergence_distance_decreases():
    rows = run_convergence("matern32:lambda=1", "1,t", (0, 1), [100, 200, 400, 800, 1600])
    d = [r.var_distance for r in rows]
    assert all(x > y for x, y in zip(d, d[1:]))
    assert "ar2_interior" in rows[0].ar2


def test_convergence_blue_2n2_efficiency_one():
    rows = run_convergence("ibm:a=0", "1", (1, 2), [3, 5, 10, 20], design="blue-2n2")
    for r in rows:
        assert r.efficiency == pytest.approx(1.0, abs=1e-6)


def test_convergence_single_row(capsys):
    code, out, _ = run(["convergence", "--kernel", "matern32:lambda=1", "--interval", "0,1",
                        "--drift", "1,t", "--N", "50"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[1].startswith("N,var_distance,efficiency")
    assert len(lines) == 3


# --------------------------------------------------------------------------
# Monte Carlo


def test_monte_carlo_table1():
    rep = run_monte_carlo(StudyConfig(N=(3,), estimators=("blue-2n0",), seed=0, replicates=20000))
    assert rep.max_relative_error() < 0.03
    assert np.all(np.abs(np.array(rep.mean) - rep.theta) <= 3 * np.array(rep.standard_error))


def test_mc_repeat_is_identical(capsys):
    argv = ["mc", "--preset", "table1", "--N", "3", "--replicates", "2000", "--seed", "5"]
    _, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second
    assert "seed: 5" in first


def test_mc_theta_length_checked(capsys):
    code, _, err = run(["mc", "--preset", "table1", "--N", "3", "--replicates", "1000",
                        "--theta", "1,2"], capsys)
    assert code == 1 and "theta" in err
