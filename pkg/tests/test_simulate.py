import math
from dataclasses import replace

import numpy as np
import pytest

from gcrf_ssl.metrics import support_mcc
from gcrf_ssl.model import Hyperparams
from gcrf_ssl.simulate import (
    SETUPS, SimConfig, gen_dataset, gen_lambda0, gen_omega_xx, gen_theta0, gen_truth,
    replication_seed, run_one, run_replications, setup_config, splitmix64,
)


def test_toeplitz_precision():
    np.testing.assert_array_equal(gen_omega_xx(3, 0.3), [[1, 0.3, 0], [0.3, 1, 0.3], [0, 0.3, 1]])
    np.testing.assert_array_equal(gen_omega_xx(4, 0.0), np.eye(4))
    np.testing.assert_allclose(np.linalg.eigvalsh(gen_omega_xx(2, 0.3)), [0.7, 1.3])
    with pytest.raises(ValueError):
        gen_omega_xx(3, 0.5)


def test_lambda0_rules():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(gen_lambda0(4, 0, (0.1, 0.2), rng), 0.2 * np.eye(4))
    lam = gen_lambda0(2, 1, (0.1, 0.2), rng)
    off = lam[0, 1]
    assert 0.1 <= abs(off) <= 0.2
    np.testing.assert_allclose(lam, [[abs(off) + 0.2, off], [off, abs(off) + 0.2]])


def test_lambda0_hand_example():
    class Fixed:
        def choice(self, a, size=None, replace=True):
            return np.zeros(size, dtype=int) if not isinstance(a, list) else np.ones(size)

        def uniform(self, lo, hi, size=None):
            return np.full(size, 0.15)

    np.testing.assert_allclose(gen_lambda0(2, 1, (0.1, 0.2), Fixed()), [[0.35, 0.15], [0.15, 0.35]])


def test_theta0_shapes_and_ranges():
    rng = np.random.default_rng(1)
    zero = gen_theta0(SimConfig(zero_row_fraction=1.0), rng)
    assert not zero.any()
    cfg = SimConfig(p=10, q=50, s_theta=4)
    theta = gen_theta0(cfg, rng)
    live = np.any(theta != 0, axis=1)
    assert (~live).sum() == math.ceil(0.7 * 50)
    assert np.all((theta != 0).sum(axis=1)[live] == 4)
    mags = np.abs(theta[theta != 0])
    assert mags.min() >= 0.1 and mags.max() <= 0.2
    total = gen_theta0(setup_config("setup1"), rng)
    assert (total != 0).sum() == 10


def test_sphere_rows():
    rng = np.random.default_rng(2)
    cfg = setup_config("setup3")
    theta = gen_theta0(cfg, rng)
    norms = np.linalg.norm(theta, axis=1)
    live = norms > 0
    np.testing.assert_allclose(norms[live], 0.5, atol=1e-12)
    counts = (theta != 0).sum(axis=1)[live]
    assert counts.min() >= 5 and counts.max() <= 25


def test_setups_bind_dimensions():
    s3 = setup_config("setup3")
    assert (s3.p, s3.q, s3.s_lambda) == (50, 100, 100)
    s1 = setup_config("setup1")
    assert (s1.p, s1.q, s1.s_theta, s1.s_lambda, s1.signal_range) == (10, 50, 10, 5, (0.1, 0.2))
    assert setup_config("s2").row_norm == 4.0
    assert set(SETUPS) == {"setup1", "setup2", "setup3", "s1", "s2"}
    with pytest.raises(ValueError):
        setup_config("setup9")


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(p=3, s_lambda=4)
    with pytest.raises(ValueError):
        SimConfig(p=3, s_theta=4)
    with pytest.raises(ValueError):
        SimConfig(signal_range=(0.2, 0.1))


def test_splitmix_reference_values():
    # reference outputs of SplitMix64 seeded with 0
    state, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF
    _, out2 = splitmix64(state)
    assert out2 == 0x6E789E6AA1B965F4
    assert replication_seed(0, 0) == 0xE220A8397B1DCDAF
    assert replication_seed(0, 1) == 0x6E789E6AA1B965F4


def test_truth_invariants():
    rng = np.random.default_rng(3)
    for name in ("setup1", "setup2", "setup3"):
        truth = gen_truth(setup_config(name), rng)
        assert np.array_equal(np.any(truth.b != 0, axis=0), np.any(truth.theta != 0, axis=1))
        np.testing.assert_allclose(truth.lam @ truth.b, -truth.theta.T, atol=1e-12)


def test_zero_theta_data_independent():
    cfg = SimConfig(p=2, q=3, n=10000, zero_row_fraction=1.0, s_lambda=1, s_theta=0)
    x, y, _ = gen_dataset(cfg)
    assert np.abs(x.T @ y / cfg.n).max() < 0.1


def test_noise_covariance():
    cfg = SimConfig(p=3, q=4, n=20000, s_lambda=2, s_theta=2, zero_row_fraction=0.5, seed=4)
    x, y, truth = gen_dataset(cfg)
    resid = y - x @ truth.b.T
    assert np.abs(resid.T @ resid / cfg.n - np.linalg.inv(truth.lam)).max() < 0.1


def test_dataset_determinism():
    cfg = setup_config("setup2", n=50, seed=9)
    a, b = gen_dataset(cfg), gen_dataset(cfg)
    for u, v in zip(a[:2], b[:2]):
        assert u.tobytes() == v.tobytes()


def test_replications():
    cfg = setup_config("setup1", n=150, seed=5)
    hp = Hyperparams.scaled(150, 10, 50, spike=0.3)
    agg = run_replications(cfg, hp, reps=2)
    assert [r.seed for r in agg.results] == [replication_seed(5, 0), replication_seed(5, 1)]
    single = run_one(replace(cfg, seed=replication_seed(5, 0)), hp)
    assert single.report == agg.results[0].report
    again = run_replications(cfg, hp, reps=2)
    assert again.mean() == agg.mean()
    assert set(agg.stderr()) == set(agg.mean())
    fixed = run_replications(cfg, hp, reps=2, fix_truth=True)
    assert len(fixed.results) == 2
    with pytest.raises(ValueError):
        run_replications(cfg, hp, reps=0)


def test_parallel_matches_serial():
    cfg = setup_config("setup1", n=120, seed=6)
    hp = Hyperparams.scaled(120, 10, 50, spike=0.3)
    serial = run_replications(cfg, hp, reps=2)
    parallel = run_replications(cfg, hp, reps=2, jobs=2)
    assert [r.report for r in serial.results] == [r.report for r in parallel.results]


def test_large_sample_setup1_error():
    cfg = setup_config("setup1", n=10000, seed=21)
    res = run_one(cfg, Hyperparams.scaled(10000, 10, 50, spike=0.3))
    assert res.report.frob_theta < 0.1


def test_column_mcc_equals_row_mcc():
    cfg = setup_config("setup2", n=300, seed=8)
    from gcrf_ssl.coef import plug_in_b
    from gcrf_ssl.model import compute_sufficient_stats
    from gcrf_ssl.solver import fit
    x, y, truth = gen_dataset(cfg)
    state, _, _ = fit(compute_sufficient_stats(x, y), Hyperparams.scaled(300, 10, 50, spike=0.3))
    b = plug_in_b(state).b
    assert support_mcc(np.any(b != 0, axis=0), np.any(truth.b != 0, axis=0)) == support_mcc(
        np.any(state.theta != 0, axis=1), np.any(truth.theta != 0, axis=1))
