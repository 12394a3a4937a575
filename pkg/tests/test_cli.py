import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from gcrf_ssl import cli, io

DATA = os.path.join(os.path.dirname(__file__), "data")
X, Y = os.path.join(DATA, "x.csv"), os.path.join(DATA, "y.csv")
FIT_CFG = os.path.join(DATA, "fit.cfg")
FIT_FILES = ["theta.csv", "lambda.csv", "b.csv", "inclusion_theta.csv", "inclusion_lambda.csv",
             "trace.csv", "config.resolved", "summary.txt"]


def _same_files(a, b, names):
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


def test_fit_fixture(tmp_path):
    assert cli.main(["fit", "--x", X, "--y", Y, "--config", FIT_CFG, "--out", str(tmp_path)]) == 0
    for name in FIT_FILES:
        assert (tmp_path / name).exists()
    expected = os.path.join(DATA, "expected")
    for name in ("theta.csv", "lambda.csv", "b.csv"):
        np.testing.assert_allclose(io.read_matrix(tmp_path / name),
                                   io.read_matrix(os.path.join(expected, name)), rtol=1e-9, atol=1e-12)
    theta0 = io.read_matrix(os.path.join(DATA, "theta0.csv"))
    assert np.array_equal(io.read_matrix(tmp_path / "theta.csv") != 0, theta0 != 0)
    resolved = io.read_config(tmp_path / "config.resolved")
    assert resolved["nu0_theta"] == "0.01" and resolved["armijo_sigma"] == "0.0001"


def test_fit_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["fit", "--x", X, "--y", Y, "--out", str(out)]) == 0
    assert _same_files(a, b, FIT_FILES)


def test_wrong_row_count(tmp_path, capsys):
    short = tmp_path / "y.csv"
    io.write_matrix(short, io.read_matrix(Y)[:150])
    assert cli.main(["fit", "--x", X, "--y", str(short), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "200" in err and "150" in err


def test_malformed_inputs(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert cli.main(["fit", "--x", str(bad), "--y", Y, "--out", str(tmp_path)]) == 1
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus_key=1\n")
    assert cli.main(["fit", "--x", X, "--y", Y, "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert cli.main(["fit", "--x", X]) == 1
    assert cli.main(["fit", "--x", str(tmp_path / "missing.csv"), "--y", Y]) == 1


def test_header_flag(tmp_path):
    hx, hy = tmp_path / "x.csv", tmp_path / "y.csv"
    hx.write_text("a,b,c\n" + open(X).read())
    hy.write_text("u,v\n" + open(Y).read())
    out = tmp_path / "o"
    assert cli.main(["fit", "--x", str(hx), "--y", str(hy), "--header", "--config", FIT_CFG,
                     "--out", str(out)]) == 0
    np.testing.assert_allclose(io.read_matrix(out / "theta.csv"),
                               io.read_matrix(os.path.join(DATA, "expected", "theta.csv")), rtol=1e-9)


def test_iteration_limit_exit_code(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("max_outer_iters=1\ncontinuation_steps=0\nnu0_theta=0.01\nnu0_lambda=0.01\n")
    assert cli.main(["fit", "--x", X, "--y", Y, "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert (tmp_path / "theta.csv").exists()


def test_stall_exit_code(tmp_path):
    y = tmp_path / "y.csv"
    io.write_matrix(y, 0.1 * io.read_matrix(Y))
    cfg = tmp_path / "c.cfg"
    cfg.write_text("spectral_bound_r=1.0\n")
    assert cli.main(["fit", "--x", X, "--y", str(y), "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_predict_fixture_regression(tmp_path):
    expected = os.path.join(DATA, "expected")
    args = ["predict", "--model", expected, "--x", os.path.join(DATA, "x_test.csv"),
            "--mask", os.path.join(DATA, "mask.csv"), "--y-known", os.path.join(DATA, "y_test.csv"),
            "--y-true", os.path.join(DATA, "y_test.csv"), "--out", str(tmp_path)]
    assert cli.main(args) == 0
    np.testing.assert_allclose(io.read_matrix(tmp_path / "predictions.csv"),
                               io.read_matrix(os.path.join(expected, "predictions.csv")), rtol=1e-10)
    got = float(io.read_config(tmp_path / "error.txt")["prediction_error"])
    want = float(io.read_config(os.path.join(expected, "error.txt"))["prediction_error"])
    assert got == pytest.approx(want, rel=1e-10)


def test_predict_paths(tmp_path):
    expected = os.path.join(DATA, "expected")
    xt = os.path.join(DATA, "x_test.csv")
    yt = os.path.join(DATA, "y_test.csv")
    assert cli.main(["predict", "--model", expected, "--x", xt, "--out", str(tmp_path / "u")]) == 0
    b = io.read_matrix(os.path.join(expected, "b.csv"))
    np.testing.assert_allclose(io.read_matrix(tmp_path / "u" / "predictions.csv"), io.read_matrix(xt) @ b.T)
    full = tmp_path / "full.csv"
    io.write_matrix(full, np.ones((20, 2)))
    assert cli.main(["predict", "--model", expected, "--x", xt, "--mask", str(full), "--y-known", yt,
                     "--out", str(tmp_path / "f")]) == 0
    np.testing.assert_array_equal(io.read_matrix(tmp_path / "f" / "predictions.csv"), io.read_matrix(yt))
    wrong = tmp_path / "wrong.csv"
    io.write_matrix(wrong, np.ones((19, 2)))
    assert cli.main(["predict", "--model", expected, "--x", xt, "--mask", str(wrong), "--y-known", yt,
                     "--out", str(tmp_path / "w")]) == 1


def test_score_command(tmp_path):
    expected = os.path.join(DATA, "expected")
    assert cli.main(["score", "--model", expected, "--truth", DATA, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "score.txt").read_text().splitlines()
    assert lines[0].startswith("frob_theta=") and len(lines) == 7
    assert "mcc_theta=1\n" in (tmp_path / "score.txt").read_text()
    header = (tmp_path / "score.csv").read_text().splitlines()[0]
    assert header.startswith("threshold,frob_theta")


def test_simulate_command(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["simulate", "setup1", "--n", "200", "--reps", "2", "--seed", "7",
                         "--out", str(out)]) == 0
    rows = (a / "scores.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("setup,n,rep,seed")
    assert len((a / "aggregate.csv").read_text().splitlines()) == 2
    assert _same_files(a, b, ["scores.csv", "aggregate.csv", "config.resolved"])


def test_simulate_echo_and_errors(tmp_path):
    assert cli.main(["simulate", "--setup", "setup3", "--n", "60", "--reps", "1",
                     "--out", str(tmp_path)]) == 0
    resolved = io.read_config(tmp_path / "config.resolved")
    assert resolved["sim.p"] == "50" and resolved["sim.q"] == "100"
    assert cli.main(["simulate", "setup1", "--reps", "0", "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "setup7", "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 1


def test_simulate_custom_config_and_export(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("p=3\nq=4\ns_lambda=1\ns_theta=1\nsignal_range=0.3,0.5\nnu0_theta=0.02\nnu0_lambda=0.02\n")
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--n", "80,120", "--reps", "1",
                     "--export-data", "--out", str(out)]) == 0
    assert (out / "data" / "n80_rep0" / "x.csv").exists()
    assert io.read_config(out / "config.resolved")["sim.signal_range"] == "0.3,0.5"
    assert len((out / "aggregate.csv").read_text().splitlines()) == 3


def test_cv_command(tmp_path):
    grid = tmp_path / "grid.cfg"
    grid.write_text("nu0_theta=0.001,0.01\n")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["cv", "--x", X, "--y", Y, "--grid", str(grid), "--k", "3", "--seed", "1",
                         "--out", str(out)]) == 0
    assert len((a / "cv_table.csv").read_text().splitlines()) == 3
    best = io.read_config(a / "best_config")
    assert best["nu0_theta"] == best["nu0_lambda"]
    assert _same_files(a, b, ["cv_table.csv", "best_config"])


def test_grid_expansion():
    combos = cli.expand_grid({"nu0_theta": "0.1,0.2", "rho": "0.3,0.5,0.7"})
    assert len(combos) == 6 and combos[0] == {"nu0_theta": "0.1", "rho": "0.3"}


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.standard_normal((5, 4)) * 10.0 ** rng.integers(-300, 300, (5, 4))
    io.write_matrix(tmp_path / "m.csv", m)
    assert io.read_matrix(tmp_path / "m.csv").tobytes() == m.tobytes()


def test_module_entry_point(tmp_path):
    env = dict(os.environ, GCRF_SSL_LOG="info")
    proc = subprocess.run([sys.executable, "-m", "gcrf_ssl", "fit", "--x", X, "--y", Y, "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert (tmp_path / "theta.csv").exists()
