import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catefuse.exceptions import ConvergenceError, DataError
from catefuse.lasso import (DesignProblem, cv_lasso, fit_lasso, kkt_violation,
                            lambda_path, penalized_objective, soft_threshold)


def test_soft_threshold_cases():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-3.0, 1.0) == -2.0


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@given(st.floats(-1e6, 1e6), st.floats(0, 1e6))
def test_soft_threshold_properties(z, t):
    s = soft_threshold(z, t)
    assert abs(s) == pytest.approx(max(abs(z) - t, 0.0))
    assert s * z >= 0.0


def _standardized(X, y, w=None):
    # independent re-implementation of the solver's internal scaling
    n = X.shape[0]
    w = np.ones(n) if w is None else w
    mu = w @ X / w.sum()
    Xc = X - mu
    s = np.sqrt(w @ (Xc * Xc) / n)
    ybar = w @ y / w.sum()
    return Xc / s, y - ybar, s


def _grid_objective_min(Xs, ys, lam, radius, center, n_grid=201):
    # dense search over the standardized coefficient plane (p = 2)
    n = Xs.shape[0]
    b1 = np.linspace(center[0] - radius, center[0] + radius, n_grid)
    b2 = np.linspace(center[1] - radius, center[1] + radius, n_grid)
    B1, B2 = np.meshgrid(b1, b2, indexing="ij")
    preds = Xs[:, 0][:, None, None] * B1 + Xs[:, 1][:, None, None] * B2
    rss = ((ys[:, None, None] - preds) ** 2).sum(axis=0)
    obj = rss / (2 * n) + lam * (np.abs(B1) + np.abs(B2))
    k = np.unravel_index(np.argmin(obj), obj.shape)
    return obj[k], np.array([B1[k], B2[k]])


def test_orthonormal_design_closed_form():
    # columns with mean 0, variance 1, empirical correlation 0
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] * 3)
    rng = np.random.default_rng(4)
    y = rng.normal(size=X.shape[0])
    lam = 0.15
    sol = fit_lasso(DesignProblem(X, y), lam)
    corr = X.T @ (y - y.mean()) / X.shape[0]
    expected = soft_threshold(corr, lam)
    assert np.allclose(sol.beta, expected, atol=1e-8)
    # cross-check the closed form against a dense grid search
    Xs, ys, s = _standardized(X, y)
    obj_grid, beta_grid = _grid_objective_min(Xs, ys, lam, 2.0, expected)
    assert np.allclose(beta_grid, expected, atol=0.02)


@pytest.mark.parametrize("seed", range(6))
def test_grid_equivalence_small_problems(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 21))
    X = rng.normal(size=(n, 2)) @ np.array([[1.0, 0.6], [0.0, 1.0]])
    y = rng.normal(size=n) + X @ rng.normal(size=2)
    lam = float(rng.uniform(0.02, 0.5))
    prob = DesignProblem(X, y)
    sol = fit_lasso(prob, lam)
    solver_obj = penalized_objective(prob, lam, sol.beta, sol.intercept)
    Xs, ys, s = _standardized(X, y)
    beta_std = sol.beta * s
    obj1, b1 = _grid_objective_min(Xs, ys, lam, 1.0, beta_std, 161)
    obj2, _ = _grid_objective_min(Xs, ys, lam, 0.02, b1, 161)
    assert solver_obj <= obj2 + 1e-6
    assert abs(solver_obj - obj2) < 1e-6


def test_grid_equivalence_raw_mode():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(15, 2))
    y = X @ np.array([1.0, -0.5]) + rng.normal(size=15) * 0.5
    lam = 0.1
    sol = fit_lasso(DesignProblem(X, y), lam, standardize=False, fit_intercept=False)
    n = 15

    def raw_obj(b):
        r = y - X @ b
        return r @ r / (2 * n) + lam * np.abs(b).sum()

    obj1, b1 = _raw_grid(X, y, lam, sol.beta, 1.0)
    obj2, _ = _raw_grid(X, y, lam, b1, 0.02)
    assert raw_obj(sol.beta) <= obj2 + 1e-6


def _raw_grid(X, y, lam, center, radius, n_grid=161):
    n = X.shape[0]
    b1 = np.linspace(center[0] - radius, center[0] + radius, n_grid)
    b2 = np.linspace(center[1] - radius, center[1] + radius, n_grid)
    B1, B2 = np.meshgrid(b1, b2, indexing="ij")
    preds = X[:, 0][:, None, None] * B1 + X[:, 1][:, None, None] * B2
    rss = ((y[:, None, None] - preds) ** 2).sum(axis=0)
    obj = rss / (2 * n) + lam * (np.abs(B1) + np.abs(B2))
    k = np.unravel_index(np.argmin(obj), obj.shape)
    return obj[k], np.array([B1[k], B2[k]])


def test_lambda_at_max_gives_null_model():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 6))
    w = rng.uniform(0.5, 2.0, size=40)
    y = rng.normal(size=40)
    prob = DesignProblem(X, y, weights=w)
    lam_max = lambda_path(prob, n_lambda=2)[0]
    sol = fit_lasso(prob, lam_max)
    assert np.all(sol.beta == 0.0)
    assert sol.intercept == pytest.approx(w @ y / w.sum())


def test_noiseless_sparse_recovery():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 10))
    beta_true = np.zeros(10)
    beta_true[[1, 4, 8]] = [1.2, -0.7, 0.4]
    y = X @ beta_true
    sol = fit_lasso(DesignProblem(X, y), 1e-4)
    assert np.max(np.abs(sol.beta - beta_true)) < 0.05


@pytest.mark.parametrize("seed", range(8))
def test_kkt_certificate_random_problems(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(20, 201))
    p = int(rng.integers(2, 51))
    X = rng.normal(size=(n, p))
    y = rng.normal(size=n) + X[:, 0] * rng.normal()
    w = rng.uniform(0.2, 3.0, size=n) if seed % 2 else None
    offset = rng.normal(size=n) * 0.3 if seed % 3 == 0 else None
    prob = DesignProblem(X, y, weights=w, offset=offset)
    lam = float(rng.uniform(0.01, 0.4))
    sol = fit_lasso(prob, lam)
    assert kkt_violation(prob, lam, sol.beta, sol.intercept) < 1e-5


def test_objective_monotone_across_sweeps():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(60, 15))
    X[:, 3] = 0.95 * X[:, 2] + 0.05 * X[:, 3]  # correlated pair slows descent
    y = X @ rng.normal(size=15) + rng.normal(size=60)
    sol = fit_lasso(DesignProblem(X, y), 0.05, record_objective=True)
    trace = sol.objective_trace
    assert trace is not None and trace.size >= 2
    assert np.all(np.diff(trace) <= 1e-12 * max(1.0, abs(trace[0])))


def test_scale_equivariance():
    rng = np.random.default_rng(31)
    X = rng.normal(size=(80, 5))
    y = X @ np.array([1.0, 0.0, -0.5, 0.2, 0.0]) + rng.normal(size=80) * 0.2
    lam = 0.05
    base = fit_lasso(DesignProblem(X, y), lam)
    X2 = X.copy()
    X2[:, 0] *= 7.5
    scaled = fit_lasso(DesignProblem(X2, y), lam)
    assert scaled.beta[0] == pytest.approx(base.beta[0] / 7.5, rel=1e-8)
    assert np.allclose(scaled.beta[1:], base.beta[1:], rtol=1e-8)
    assert np.allclose(X2 @ scaled.beta + scaled.intercept,
                       X @ base.beta + base.intercept, atol=1e-8)


def test_degenerate_column_flagged_zero():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 4))
    X[:, 2] = 3.14  # constant
    y = X[:, 0] + rng.normal(size=30) * 0.1
    sol = fit_lasso(DesignProblem(X, y), 0.01)
    assert sol.beta[2] == 0.0
    assert sol.degenerate[2] and not sol.degenerate[0]


def test_nonconvergence_carries_last_iterate():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 8))
    y = X @ rng.normal(size=8) + rng.normal(size=50)
    with pytest.raises(ConvergenceError) as exc:
        fit_lasso(DesignProblem(X, y), 0.01, tol=1e-16, max_iter=1, kkt_tol=1e-16)
    assert exc.value.beta is not None and exc.value.beta.shape == (8,)
    assert exc.value.n_sweeps == 1


def test_lambda_zero_matches_least_squares():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(50, 6))
    w = rng.uniform(0.5, 2.0, size=50)
    y = X @ rng.normal(size=6) + rng.normal(size=50)
    sol = fit_lasso(DesignProblem(X, y, weights=w), 0.0)
    # weighted least squares oracle with intercept
    A = np.column_stack([np.ones(50), X]) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)
    assert sol.intercept == pytest.approx(coef[0], abs=1e-8)
    assert np.allclose(sol.beta, coef[1:], atol=1e-8)


def test_lambda_zero_underdetermined_errors():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(5, 9))
    with pytest.raises(DataError):
        fit_lasso(DesignProblem(X, rng.normal(size=5)), 0.0)


def test_weights_match_row_duplication():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(25, 4))
    y = X @ np.array([0.8, 0.0, -0.3, 0.1]) + rng.normal(size=25) * 0.3
    reps = rng.integers(1, 4, size=25)
    Xd = np.repeat(X, reps, axis=0)
    yd = np.repeat(y, reps)
    lam = 0.05
    # The two phrasings share a loss up to the n-normalizer, and the internal
    # standardization scales differ by sqrt(n_w / n_d); matching both gives
    # lambda_w = lambda_d * sqrt(n_d / n_w).
    n_w, n_d = 25, int(reps.sum())
    sol_w = fit_lasso(DesignProblem(X, y, weights=reps.astype(float)),
                      lam * np.sqrt(n_d / n_w))
    sol_d = fit_lasso(DesignProblem(Xd, yd), lam)
    assert np.allclose(sol_w.beta, sol_d.beta, atol=1e-7)
    assert sol_w.intercept == pytest.approx(sol_d.intercept, abs=1e-7)


# --- lambda_path -----------------------------------------------------------


def test_lambda_path_endpoints():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 3))
    prob = DesignProblem(X, rng.normal(size=30))
    path = lambda_path(prob, n_lambda=2, min_ratio=0.01)
    assert path[1] == pytest.approx(0.01 * path[0])
    assert len(lambda_path(prob, n_lambda=100)) == 100
    assert np.all(np.diff(lambda_path(prob, n_lambda=100)) < 0)


def test_lambda_path_hand_computed():
    # 4-point dataset, single covariate already standardized and equal to y
    x = np.array([-1.0, -1.0, 1.0, 1.0])
    prob = DesignProblem(x[:, None], x)
    path = lambda_path(prob, n_lambda=2, min_ratio=0.5)
    assert path[0] == pytest.approx(np.var(x))  # = 1.0


def test_lambda_path_degenerate_response():
    X = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(DataError, match="degenerate response"):
        lambda_path(DesignProblem(X, np.full(10, 2.5)))


def test_lambda_path_validates_arguments():
    X = np.random.default_rng(0).normal(size=(10, 2))
    prob = DesignProblem(X, X[:, 0])
    with pytest.raises(ValueError):
        lambda_path(prob, n_lambda=1)
    with pytest.raises(ValueError):
        lambda_path(prob, min_ratio=1.5)


# --- cv_lasso --------------------------------------------------------------


def test_cv_lasso_deterministic():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(120, 12))
    y = X @ np.concatenate([[1.0, -0.5], np.zeros(10)]) + rng.normal(size=120) * 0.3
    prob = DesignProblem(X, y)
    a = cv_lasso(prob, 5, 42)
    b = cv_lasso(prob, 5, 42)
    assert np.array_equal(a.beta, b.beta)
    assert a.intercept == b.intercept
    assert a.lambda_selected == b.lambda_selected
    assert np.array_equal(a.cv_mean, b.cv_mean)
    c = cv_lasso(prob, 5, 43)
    assert not np.array_equal(a.cv_mean, c.cv_mean)


def test_cv_lasso_pure_noise_shrinks_to_null():
    rng = np.random.default_rng(44)
    X = rng.normal(size=(500, 50))
    y = rng.normal(size=500)
    fit = cv_lasso(DesignProblem(X, y), 10, 1)
    assert np.max(np.abs(fit.beta)) < 0.05


def test_cv_lasso_planted_sparse_model():
    rng = np.random.default_rng(55)
    n, p, s = 5000, 100, 10
    X = rng.normal(size=(n, p))
    support = rng.choice(p, s, replace=False)
    beta_true = np.zeros(p)
    beta_true[support] = rng.uniform(1 / 3, 2 / 3, s) * rng.choice([-1, 1], s)
    y = X @ beta_true + rng.normal(size=n) / 3
    fit = cv_lasso(DesignProblem(X, y), 10, 2)
    assert set(support) <= set(np.flatnonzero(fit.beta))
    assert np.sqrt(np.mean((fit.beta - beta_true) ** 2)) < 0.05


def test_cv_lasso_selected_lambda_on_path():
    rng = np.random.default_rng(66)
    X = rng.normal(size=(60, 5))
    y = X[:, 0] + rng.normal(size=60)
    fit = cv_lasso(DesignProblem(X, y), 5, 0)
    assert fit.lambda_selected in fit.lambdas
    assert kkt_violation(DesignProblem(X, y), fit.lambda_selected, fit.beta,
                         fit.intercept) < 1e-5
    assert len(fit.path) == fit.lambdas.size


def test_cv_lasso_one_se_rule_selects_larger_lambda():
    rng = np.random.default_rng(77)
    X = rng.normal(size=(150, 20))
    y = X[:, 0] - 0.5 * X[:, 1] + rng.normal(size=150)
    prob = DesignProblem(X, y)
    lam_min = cv_lasso(prob, 10, 3, rule="min").lambda_selected
    lam_1se = cv_lasso(prob, 10, 3, rule="1se").lambda_selected
    assert lam_1se >= lam_min


def test_cv_lasso_fold_validation():
    rng = np.random.default_rng(88)
    X = rng.normal(size=(3, 2))
    y = X[:, 0] + rng.normal(size=3) * 0.1
    with pytest.raises(DataError, match="fewer than 2"):
        cv_lasso(DesignProblem(X, y), 2, 0)
    X = rng.normal(size=(10, 2))
    y = X[:, 0]
    with pytest.raises(ValueError, match="exceeds"):
        cv_lasso(DesignProblem(X, y), 11, 0)
    with pytest.raises(ValueError, match="partition"):
        cv_lasso(DesignProblem(X, y), 2, 0, folds=[np.arange(3), np.arange(5, 10)])


def test_cv_lasso_row_permutation_with_matched_folds():
    rng = np.random.default_rng(99)
    n = 80
    X = rng.normal(size=(n, 6))
    y = X @ np.array([1.0, 0, 0, -0.4, 0, 0]) + rng.normal(size=n) * 0.2
    folds = [np.arange(0, 27), np.arange(27, 54), np.arange(54, n)]
    fit = cv_lasso(DesignProblem(X, y), 3, 0, folds=folds)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    permuted_folds = [np.sort(inv[f]) for f in folds]
    fit_p = cv_lasso(DesignProblem(X[perm], y[perm]), 3, 0, folds=permuted_folds)
    assert np.allclose(fit.beta, fit_p.beta, atol=1e-10)
    assert fit.intercept == pytest.approx(fit_p.intercept, abs=1e-10)


@settings(deadline=None, max_examples=15)
@given(st.integers(0, 10_000))
def test_kkt_holds_on_cv_solutions(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(30, 80))
    p = int(rng.integers(2, 10))
    X = rng.normal(size=(n, p))
    y = X @ rng.normal(size=p) * 0.5 + rng.normal(size=n)
    prob = DesignProblem(X, y)
    fit = cv_lasso(prob, 5, seed)
    assert kkt_violation(prob, fit.lambda_selected, fit.beta, fit.intercept) < 1e-5
