import numpy as np
import pytest

from catefuse.exceptions import DataError
from catefuse.simulator import (GroundTruth, SimConfig, _tune_intercept,
                                drop_modifiers, effect_modifiers, gen_os,
                                gen_rct, gen_truth, make_covariance,
                                sample_mvn, simulate, true_cate)


def test_make_covariance_small():
    assert np.array_equal(make_covariance(2, 0.5), [[1.0, 0.5], [0.5, 1.0]])


def test_make_covariance_rejects_diagonal_and_unstable():
    with pytest.raises(DataError, match="nonzero"):
        make_covariance(3, 0.0)
    with pytest.raises(DataError, match="rho"):
        make_covariance(3, 1.0)
    with pytest.raises(DataError, match="rho"):
        make_covariance(3, -1.2)


def test_make_covariance_positive_definite_at_scale():
    cov = make_covariance(100, 0.5)
    assert np.all(cov[np.triu_indices(100, 1)] != 0)
    assert np.linalg.eigvalsh(cov).min() > 0


def test_sample_mvn_moments():
    rng = np.random.default_rng(0)
    X = sample_mvn(100_000, np.zeros(3), np.eye(3), rng)
    assert np.all(np.abs(X.mean(axis=0)) < 0.02)
    assert np.all(np.abs(X.var(axis=0) - 1) < 0.05)


def test_sample_mvn_correlation():
    rng = np.random.default_rng(1)
    X = sample_mvn(100_000, np.zeros(2), make_covariance(2, 0.5), rng)
    assert abs(np.corrcoef(X.T)[0, 1] - 0.5) < 0.02


def test_sample_mvn_requires_spd():
    rng = np.random.default_rng(2)
    with pytest.raises(DataError, match="positive definite"):
        sample_mvn(5, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), rng)
    with pytest.raises(DataError, match="symmetric"):
        sample_mvn(5, np.zeros(2), np.array([[1.0, 0.2], [0.0, 1.0]]), rng)


def _truth(seed=0, **kw):
    cfg = SimConfig(seed=seed, **kw)
    return cfg, gen_truth(cfg, np.random.default_rng(seed))


def test_gen_truth_supports_and_magnitudes():
    cfg, truth = _truth(seed=5)
    for arm in (-1, 1):
        nz = truth.beta_o[arm][truth.beta_o[arm] != 0]
        assert nz.size == 10
        assert np.all((np.abs(nz) >= 1 / 3) & (np.abs(nz) <= 2 / 3))


def test_gen_truth_outcome_shift():
    cfg, truth = _truth(seed=6)
    for arm in (-1, 1):
        delta = truth.beta_r[arm] - truth.beta_o[arm]
        nz = delta[delta != 0]
        assert nz.size == 2
        assert np.all((np.abs(nz) >= 0.5) & (np.abs(nz) <= 1.0))


def test_gen_truth_zero_shift_degenerate():
    cfg, truth = _truth(seed=7, outcome_shift_per_arm=0)
    for arm in (-1, 1):
        assert np.array_equal(truth.beta_r[arm], truth.beta_o[arm])


def test_gen_truth_mean_shift():
    cfg, truth = _truth(seed=8)
    nz = truth.rct_mean_shift[truth.rct_mean_shift != 0]
    assert nz.size == 10
    assert np.all((np.abs(nz) >= 0.25) & (np.abs(nz) <= 0.5))


def test_gen_truth_propensity_spec():
    cfg, truth = _truth(seed=9)
    coefs = truth.os_propensity.coef
    assert np.count_nonzero(coefs) == 10
    assert np.all(np.abs(coefs[coefs != 0]) <= 1.0)


def test_gen_truth_quadratic_terms():
    cfg, truth = _truth(seed=10, misspecified=True)
    assert set(truth.quad_terms) == {("o", -1), ("o", 1), ("r", -1), ("r", 1)}
    for (study, arm), terms in truth.quad_terms.items():
        beta = truth.coefficients(study, arm)
        assert set(terms) == set(np.flatnonzero(beta).tolist())
        assert all(0.25 <= m <= 0.5 for m in terms.values())
    _, clean = _truth(seed=10, misspecified=False)
    assert clean.quad_terms == {}


def test_tune_intercept():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=50_000) - 3.0  # fraction far below one third
    c = _tune_intercept(scores, 1 / 3)
    from scipy.special import expit

    assert abs(expit(scores + c).mean() - 1 / 3) < 1e-9
    assert _tune_intercept(rng.normal(size=1000), 1 / 3) == 0.0


def test_gen_os_treated_fraction():
    cfg = SimConfig(n_o=10_000, seed=11)
    truth = gen_truth(cfg, np.random.default_rng(11))
    ds = gen_os(cfg, truth, np.random.default_rng(12))
    assert (ds.A == 1).mean() >= 1 / 3 - 0.02
    assert ds.study == "o" and ds.n == 10_000 and ds.p == 100


def test_gen_os_noiseless_exact():
    cfg = SimConfig(n_o=200, noise_sd=0.0, seed=13)
    truth = gen_truth(cfg, np.random.default_rng(13))
    ds = gen_os(cfg, truth, np.random.default_rng(14))
    for arm in (-1, 1):
        rows = ds.arm_rows(arm)
        assert np.allclose(ds.Y[rows], ds.X[rows] @ truth.beta_o[arm], atol=1e-12)


def test_gen_os_ols_oracle_recovery():
    cfg = SimConfig(n_o=100_000, seed=15)
    truth = gen_truth(cfg, np.random.default_rng(15))
    ds = gen_os(cfg, truth, np.random.default_rng(16))
    for arm in (-1, 1):
        rows = ds.arm_rows(arm)
        beta_hat, *_ = np.linalg.lstsq(ds.X[rows], ds.Y[rows], rcond=None)
        rms = np.sqrt(np.mean((beta_hat - truth.beta_o[arm]) ** 2))
        assert rms < 0.03


def test_gen_rct_treated_fraction_and_shift():
    cfg = SimConfig(n_r=1000, seed=17)
    truth = gen_truth(cfg, np.random.default_rng(17))
    ds = gen_rct(cfg, truth, np.random.default_rng(18))
    frac = (ds.A == 1).mean()
    assert abs(frac - 0.5) <= 3 / np.sqrt(1000)
    shifted = np.flatnonzero(truth.rct_mean_shift)
    assert shifted.size == 10
    sample_means = ds.X[:, shifted].mean(axis=0)
    assert np.allclose(sample_means, truth.rct_mean_shift[shifted], atol=0.15)


def test_gen_rct_outcome_decomposition():
    # with noise off, Y = m(X) + (A/2) tau(X) at assignment probability 1/2
    cfg = SimConfig(n_r=300, noise_sd=0.0, seed=19)
    truth = gen_truth(cfg, np.random.default_rng(19))
    ds = gen_rct(cfg, truth, np.random.default_rng(20))
    m = 0.5 * (truth.mean_outcome("r", 1, ds.X) + truth.mean_outcome("r", -1, ds.X))
    tau = truth.cate(ds.X)
    assert np.allclose(ds.Y, m + ds.A / 2 * tau, atol=1e-12)


def test_true_cate_cases():
    base = dict(
        quad_terms={},
        rct_mean_shift=np.zeros(2),
        os_propensity=None,
    )
    same = GroundTruth(beta_o={-1: np.zeros(2), 1: np.zeros(2)},
                       beta_r={-1: np.array([1.0, 2.0]), 1: np.array([1.0, 2.0])},
                       **base)
    assert true_cate(same, np.array([3.0, -4.0])) == 0.0
    hand = GroundTruth(beta_o={-1: np.zeros(2), 1: np.zeros(2)},
                       beta_r={-1: np.array([0.0, 1.0]), 1: np.array([1.0, 0.0])},
                       **base)
    assert true_cate(hand, np.array([2.0, 3.0])) == pytest.approx(-1.0)
    quad = GroundTruth(beta_o={-1: np.zeros(2), 1: np.zeros(2)},
                       beta_r={-1: np.array([0.0, 1.0]), 1: np.array([1.0, 0.0])},
                       quad_terms={("r", 1): {0: 0.4}, ("r", -1): {0: 0.3}},
                       rct_mean_shift=np.zeros(2), os_propensity=None)
    x = np.array([2.0, 3.0])
    assert true_cate(quad, x) == pytest.approx(-1.0 + (0.4 - 0.3) * 4.0)


def test_drop_modifiers():
    cfg = SimConfig(n_o=60, n_r=40, seed=21)
    truth = gen_truth(cfg, np.random.default_rng(21))
    os_ds = gen_os(cfg, truth, np.random.default_rng(22))
    rct_ds = gen_rct(cfg, truth, np.random.default_rng(23))
    o0, r0, removed0 = drop_modifiers(os_ds, rct_ds, truth, 0.0,
                                      np.random.default_rng(1))
    assert removed0.size == 0 and o0 is os_ds and r0 is rct_ds
    o1, r1, removed = drop_modifiers(os_ds, rct_ds, truth, 0.5,
                                     np.random.default_rng(1))
    modifiers = effect_modifiers(truth)
    assert removed.size == int(np.ceil(0.5 * modifiers.size))
    assert set(removed) <= set(modifiers)
    assert o1.p == os_ds.p - removed.size and r1.p == rct_ds.p - removed.size
    assert o1.feature_names == r1.feature_names
    kept = np.setdiff1d(np.arange(os_ds.p), removed)
    assert np.array_equal(o1.X, os_ds.X[:, kept])
    assert np.array_equal(r1.X, rct_ds.X[:, kept])
    assert np.array_equal(truth.removed_indices, removed)
    with pytest.raises(DataError, match="fraction"):
        drop_modifiers(os_ds, rct_ds, truth, 0.6, np.random.default_rng(1))


def test_drop_modifiers_fifteen_to_eight():
    # engineered truth with exactly 15 modifier coordinates
    p = 30
    beta = np.zeros(p)
    beta_plus = beta.copy()
    beta_plus[:15] = 0.5
    truth = GroundTruth(beta_o={-1: beta, 1: beta_plus},
                        beta_r={-1: beta, 1: beta_plus},
                        quad_terms={}, rct_mean_shift=np.zeros(p),
                        os_propensity=None)
    assert effect_modifiers(truth).size == 15
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, p))
    a = np.resize([1, -1], 12)
    names = [f"x{j+1}" for j in range(p)]
    from catefuse.data import StudyDataset

    os_ds = StudyDataset("o", X, a, rng.normal(size=12), names)
    rct_ds = StudyDataset("r", X, a, rng.normal(size=12), names)
    _, _, removed = drop_modifiers(os_ds, rct_ds, truth, 0.5, rng)
    assert removed.size == 8


def test_simulate_reproducible():
    cfg = SimConfig(n_o=300, n_r=80, seed=99, removed_modifier_fraction=0.2)
    t1, o1, r1 = simulate(cfg)
    t2, o2, r2 = simulate(cfg)
    assert np.array_equal(o1.X, o2.X) and np.array_equal(o1.Y, o2.Y)
    assert np.array_equal(r1.X, r2.X) and np.array_equal(r1.A, r2.A)
    assert np.array_equal(t1.removed_indices, t2.removed_indices)
    for arm in (-1, 1):
        assert np.array_equal(t1.beta_r[arm], t2.beta_r[arm])


def test_linear_cate_when_well_specified():
    cfg = SimConfig(seed=31)
    truth = gen_truth(cfg, np.random.default_rng(31))
    X = np.random.default_rng(0).normal(size=(50, cfg.p))
    contrast = truth.beta_r[1] - truth.beta_r[-1]
    assert np.allclose(truth.cate(X), X @ contrast, atol=1e-12)


def test_sine_misspecification_hook():
    cfg = SimConfig(seed=32, misspecified=True, misspec_kind="sine")
    truth = gen_truth(cfg, np.random.default_rng(32))
    X = np.random.default_rng(1).normal(size=(20, cfg.p))
    idx = np.fromiter(truth.quad_terms[("r", 1)].keys(), dtype=np.intp)
    m = np.fromiter(truth.quad_terms[("r", 1)].values(), dtype=np.float64)
    expected = X @ truth.beta_r[1] + np.sin(X[:, idx]) @ m
    assert np.allclose(truth.mean_outcome("r", 1, X), expected, atol=1e-12)


def test_sim_config_validation():
    with pytest.raises(DataError):
        SimConfig(support_size=101)
    with pytest.raises(DataError):
        SimConfig(removed_modifier_fraction=0.6)
    with pytest.raises(DataError):
        SimConfig(noise_sd=-0.1)
    with pytest.raises(DataError):
        SimConfig(misspec_kind="cubic")
