"""L1-penalized weighted least squares via cyclic coordinate descent.

Solves

    min_{b0, beta}  (1/2n) * sum_i w_i (y_i - offset_i - b0 - x_i' beta)^2
                    + lambda * ||beta||_1

with an unpenalized intercept. Predictors are standardized internally to
weighted mean 0 / variance 1 (the penalty applies to the standardized
coefficients) and results are reported on the original scale. The solver
works on the Gram matrix of the standardized design, so a whole
regularization path costs one Gram computation plus cheap warm-started
coordinate sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._validation import as_matrix, as_vector, check_weights
from .exceptions import ConvergenceError, DataError

DEFAULT_TOL = 1e-7
DEFAULT_KKT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000
DEFAULT_N_LAMBDA = 100

# Weighted column variances at or below this (relative) level are treated
# as constant columns: their coefficients are pinned to zero and flagged.
_DEGENERATE_RTOL = 1e-12


def soft_threshold(z: float, t: float):
    """Shrink ``z`` toward zero by ``t``: sign(z) * max(|z| - t, 0).

    ``t`` must be nonnegative. Accepts arrays and broadcasts elementwise.
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class DesignProblem:
    """A weighted regression design.

    Parameters
    ----------
    X : (n, p) array
        Covariates. Must be finite.
    y : (n,) array
        Response.
    weights : (n,) array, optional
        Nonnegative observation weights with positive sum. Default all ones.
    offset : (n,) array, optional
        Subtracted from ``y`` before fitting; the fitted model predicts
        ``y - offset``. Default zero.
    """

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        n = self.X.shape[0]
        self.y = as_vector(self.y, n, "y")
        self.weights = (
            np.ones(n) if self.weights is None else check_weights(self.weights, n)
        )
        self.offset = (
            np.zeros(n) if self.offset is None else as_vector(self.offset, n, "offset")
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class LassoSolution:
    """A single penalized fit, on the original covariate scale."""

    beta: np.ndarray
    intercept: float
    lam: float
    n_sweeps: int
    converged: bool
    degenerate: np.ndarray  # bool mask of constant columns forced to zero
    objective_trace: np.ndarray | None = None

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.beta + self.intercept


@dataclass
class LassoFit:
    """A cross-validated fit: selected model plus the full penalty path."""

    beta: np.ndarray
    intercept: float
    lambda_selected: float
    lambdas: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    rule: str
    solution: LassoSolution = field(repr=False)

    def __post_init__(self):
        if not np.all(np.diff(self.lambdas) < 0):
            raise ValueError("lambda path must be strictly decreasing")
        if not np.any(np.isclose(self.lambdas, self.lambda_selected, rtol=0, atol=0)):
            raise ValueError("selected lambda is not on the path")

    @property
    def path(self) -> list[tuple[float, float, float]]:
        """(lambda, mean CV error, CV standard error) per grid point."""
        return list(zip(self.lambdas.tolist(), self.cv_mean.tolist(), self.cv_se.tolist()))

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.beta + self.intercept


@njit(cache=True)
def _cd_pass(G, q, lam, beta, Gb, active_only):
    """One coordinate pass; returns the largest coefficient change.

    Degenerate columns (G[j, j] == 0) are skipped so their coefficients
    stay zero. G is symmetric, so the gradient cache update reads row j
    (contiguous) instead of column j.
    """
    p = q.shape[0]
    dmax = 0.0
    for j in range(p):
        bj = beta[j]
        if active_only and bj == 0.0:
            continue
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        z = q[j] - Gb[j] + gjj * bj
        az = abs(z) - lam
        if az > 0.0:
            nb = az / gjj if z > 0.0 else -az / gjj
        else:
            nb = 0.0
        d = nb - bj
        if d != 0.0:
            beta[j] = nb
            for k in range(p):
                Gb[k] += d * G[j, k]
            ad = -d if d < 0.0 else d
            if ad > dmax:
                dmax = ad
    return dmax


@njit(cache=True)
def _kkt_gap(G, q, lam, beta, Gb):
    """Largest optimality violation, from the maintained gradient cache."""
    gap = 0.0
    for j in range(q.shape[0]):
        if G[j, j] <= 0.0:
            continue
        g = q[j] - Gb[j]
        if beta[j] > 0.0:
            v = abs(g - lam)
        elif beta[j] < 0.0:
            v = abs(g + lam)
        else:
            v = abs(g) - lam
        if v > gap:
            gap = v
    return gap


@njit(cache=True)
def _cd_solve(G, q, lam, beta, tol, kkt_tol, max_iter, obj_trace, record_obj):
    """Cyclic coordinate descent on the standardized Gram system.

    Alternates full passes with passes over the active set. Converged when
    a full pass moves no coefficient by more than ``tol``, or when the
    optimality gap falls below ``kkt_tol`` (on badly conditioned designs
    the iterates creep along a flat valley long after the fit itself is
    certified optimal). Returns (number of passes, converged flag). When
    ``record_obj`` is set, writes 0.5 b'Gb - q'b + lam*||b||_1 per pass
    into ``obj_trace``.
    """
    p = q.shape[0]
    Gb = G @ beta
    sweeps = 0
    while sweeps < max_iter:
        if sweeps % 128 == 0 and sweeps > 0:
            # Rebuild the gradient cache to cancel accumulated rounding drift.
            Gb = G @ beta
        dmax = _cd_pass(G, q, lam, beta, Gb, False)
        sweeps += 1
        if record_obj:
            quad = 0.0
            lin = 0.0
            l1 = 0.0
            for j in range(p):
                quad += beta[j] * Gb[j]
                lin += q[j] * beta[j]
                l1 += abs(beta[j])
            obj_trace[sweeps - 1] = 0.5 * quad - lin + lam * l1
        if dmax < tol or _kkt_gap(G, q, lam, beta, Gb) < kkt_tol:
            return sweeps, True
        while sweeps < max_iter:
            dmax = _cd_pass(G, q, lam, beta, Gb, True)
            sweeps += 1
            if record_obj:
                quad = 0.0
                lin = 0.0
                l1 = 0.0
                for j in range(p):
                    quad += beta[j] * Gb[j]
                    lin += q[j] * beta[j]
                    l1 += abs(beta[j])
                obj_trace[sweeps - 1] = 0.5 * quad - lin + lam * l1
            if dmax < tol:
                break
    return sweeps, False


@dataclass
class _Prepared:
    """Standardized design plus the Gram quantities the solver consumes."""

    Xs: np.ndarray
    ys: np.ndarray
    w: np.ndarray
    n: int
    scale: np.ndarray
    center: np.ndarray
    y_center: float
    degenerate: np.ndarray
    G: np.ndarray
    q: np.ndarray
    y_ss: float
    fit_intercept: bool


def _prepare(X, y_eff, w, standardize: bool, fit_intercept: bool) -> _Prepared:
    n, p = X.shape
    wsum = w.sum()
    if fit_intercept:
        center = (w @ X) / wsum
        y_center = float(w @ y_eff / wsum)
    else:
        center = np.zeros(p)
        y_center = 0.0
    Xc = X - center
    ys = y_eff - y_center
    # Second moments use the same 1/n normalizer as the loss, so that
    # standardized columns have G[j, j] == 1 exactly.
    s2 = (w @ (Xc * Xc)) / n
    degenerate = s2 <= _DEGENERATE_RTOL * max(1.0, float(s2.max(initial=0.0)))
    scale = np.ones(p)
    if standardize:
        scale = np.where(degenerate, 1.0, np.sqrt(s2))
    Xs = Xc / scale
    Xs[:, degenerate] = 0.0
    Xw = Xs * w[:, None]
    G = (Xs.T @ Xw) / n
    q = (Xw.T @ ys) / n
    y_ss = float(w @ (ys * ys) / n)
    return _Prepared(Xs, ys, w, n, scale, center, y_center, degenerate, G, q, y_ss,
                     fit_intercept)


def _back_transform(prep: _Prepared, beta_std: np.ndarray) -> tuple[np.ndarray, float]:
    beta = beta_std / prep.scale
    beta[prep.degenerate] = 0.0
    intercept = prep.y_center - float(prep.center @ beta) if prep.fit_intercept else 0.0
    return beta, intercept


def _solve_ols(prep: _Prepared) -> np.ndarray:
    """Unpenalized weighted least squares on the non-degenerate columns."""
    active = ~prep.degenerate
    p_active = int(active.sum())
    if prep.n < p_active:
        raise DataError(
            f"lambda = 0 requires at least as many observations as active "
            f"columns (n = {prep.n}, active p = {p_active})"
        )
    sw = np.sqrt(prep.w)
    A = prep.Xs[:, active] * sw[:, None]
    b = prep.ys * sw
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    beta_std = np.zeros(prep.Xs.shape[1])
    beta_std[active] = coef
    return beta_std


def fit_lasso(
    prob: DesignProblem,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    kkt_tol: float = DEFAULT_KKT_TOL,
    standardize: bool = True,
    fit_intercept: bool = True,
    record_objective: bool = False,
) -> LassoSolution:
    """Solve one penalized weighted least-squares problem.

    Parameters
    ----------
    prob : DesignProblem
    lam : float
        Penalty level. ``lam = 0`` requests a plain weighted least-squares
        fit and requires n >= (number of non-constant columns).
    tol : float
        Convergence threshold on the maximum absolute coefficient change
        per sweep, on the standardized scale.
    max_iter : int
        Sweep budget; exhausting it raises :class:`ConvergenceError`
        carrying the last iterate.
    kkt_tol : float
        Alternative convergence certificate: stop once every coordinate's
        optimality violation is below this, even if coefficients are still
        creeping (near-singular designs stall the ``tol`` criterion).
    standardize, fit_intercept : bool
        Both default to True (the production configuration). Turning both
        off solves the raw objective with no intercept, which is what the
        algebraic reduction tests need.
    record_objective : bool
        When set, the returned solution carries the per-sweep penalized
        objective (including the constant response term).

    Returns
    -------
    LassoSolution
        Coefficients on the original covariate scale. At convergence the
        standardized-scale KKT conditions hold within tolerance: the
        weighted residual correlation equals ``lam * sign(beta_j)`` on the
        active set and is at most ``lam`` elsewhere. Constant columns are
        forced to zero and flagged in ``degenerate``.
    """
    lam = float(lam)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    prep = _prepare(prob.X, prob.y - prob.offset, prob.weights, standardize,
                    fit_intercept)
    if lam == 0.0:
        beta_std = _solve_ols(prep)
        beta, intercept = _back_transform(prep, beta_std)
        return LassoSolution(beta, intercept, lam, 0, True, prep.degenerate.copy())
    beta_std = np.zeros(prob.p)
    trace = np.empty(max_iter if record_objective else 0)
    n_sweeps, converged = _cd_solve(prep.G, prep.q, lam, beta_std, tol, kkt_tol,
                                    max_iter, trace, record_objective)
    beta, intercept = _back_transform(prep, beta_std)
    if not converged:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_iter} sweeps "
            f"(lambda = {lam:g})",
            beta=beta, intercept=intercept, n_sweeps=n_sweeps,
        )
    objective_trace = None
    if record_objective:
        objective_trace = trace[:n_sweeps] + 0.5 * prep.y_ss
    return LassoSolution(beta, intercept, lam, n_sweeps, converged,
                         prep.degenerate.copy(), objective_trace)


def penalized_objective(
    prob: DesignProblem,
    lam: float,
    beta: np.ndarray,
    intercept: float = 0.0,
    *,
    standardize: bool = True,
) -> float:
    """Evaluate the solver's objective at an original-scale candidate.

    The L1 term applies to the standardized coefficients when
    ``standardize`` is set, mirroring what the solver minimizes.
    """
    prep = _prepare(prob.X, prob.y - prob.offset, prob.weights, standardize, True)
    r = prob.y - prob.offset - intercept - prob.X @ beta
    loss = 0.5 * float(prob.weights @ (r * r)) / prob.n
    return loss + lam * float(np.abs(beta * prep.scale).sum())


def kkt_violation(
    prob: DesignProblem,
    lam: float,
    beta: np.ndarray,
    intercept: float = 0.0,
    *,
    standardize: bool = True,
) -> float:
    """Maximum violation of the coordinate-wise optimality conditions.

    Computed on the standardized design the solver optimizes: for active
    coordinates |g_j - lam * sign(beta_j)|, for zero coordinates
    max(0, |g_j| - lam), where g_j = (1/n) sum_i w_i x_ij r_i with
    standardized x. A correct solution keeps this at or below the solver
    tolerance.
    """
    prep = _prepare(prob.X, prob.y - prob.offset, prob.weights, standardize, True)
    r = prob.y - prob.offset - intercept - prob.X @ beta
    g = prep.Xs.T @ (prob.weights * r) / prob.n
    active = beta != 0
    viol = np.maximum(np.abs(g) - lam, 0.0)
    viol[active] = np.abs(g[active] - lam * np.sign(beta[active]))
    viol[prep.degenerate] = 0.0
    return float(viol.max())


def lambda_path(
    prob: DesignProblem,
    n_lambda: int = DEFAULT_N_LAMBDA,
    min_ratio: float | None = None,
) -> np.ndarray:
    """Geometric penalty grid from the null-model threshold downward.

    The largest value is max_j |(1/n) sum_i w_i x~_ij (y_i - ybar)| on the
    standardized design: the smallest penalty with an all-zero solution.
    ``min_ratio`` defaults to 1e-2 when n < p and 1e-4 otherwise.
    """
    if n_lambda < 2:
        raise ValueError("n_lambda must be at least 2")
    if min_ratio is None:
        min_ratio = 1e-2 if prob.n < prob.p else 1e-4
    if not (0.0 < min_ratio < 1.0):
        raise ValueError("min_ratio must lie in (0, 1)")
    prep = _prepare(prob.X, prob.y - prob.offset, prob.weights, True, True)
    lam_max = float(np.abs(prep.q).max())
    if lam_max <= 0.0:
        raise DataError("degenerate response: all penalty thresholds are zero")
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


# Early path termination, mirroring the reference tooling's defaults: stop
# once the training fit saturates (fraction of variance explained above
# _DEVMAX, or improving by less than _FDEV relative per step). Deep-tail
# fits on near-singular designs get a per-penalty sweep budget; exhausting
# it also ends the path (cross-validation never selects that region).
_DEVMAX = 0.999
_FDEV = 1e-5
_PATH_SWEEP_BUDGET = 1500


def _path_solutions(prep: _Prepared, lambdas: np.ndarray, tol: float,
                    max_iter: int, early_stop: bool = False,
                    kkt_tol: float = DEFAULT_KKT_TOL
                    ) -> tuple[np.ndarray, np.ndarray, int]:
    """Warm-started fits along a decreasing penalty grid.

    Returns original-scale coefficients (m, p), intercepts (m,), and the
    number m <= n_lambda of grid points actually fitted. With
    ``early_stop`` the path ends where the training fit saturates, or just
    before a deep-tail fit that cannot be certified within the sweep
    budget (near-singular designs); without it, non-convergence raises.
    """
    p = prep.Xs.shape[1]
    betas = np.empty((lambdas.size, p))
    intercepts = np.empty(lambdas.size)
    beta_std = np.zeros(p)
    trace = np.empty(0)
    rsq_prev = 0.0
    n_used = lambdas.size
    budget = min(max_iter, _PATH_SWEEP_BUDGET) if early_stop else max_iter
    for i, lam in enumerate(lambdas):
        before = beta_std.copy()
        n_sweeps, converged = _cd_solve(prep.G, prep.q, lam, beta_std, tol,
                                        kkt_tol, budget, trace, False)
        if not converged:
            if early_stop and i > 0:
                beta_std = before
                n_used = i
                break
            beta, intercept = _back_transform(prep, beta_std)
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_iter} sweeps "
                f"(lambda = {lam:g}, path index {i})",
                beta=beta, intercept=intercept, n_sweeps=n_sweeps,
            )
        betas[i], intercepts[i] = _back_transform(prep, beta_std)
        if early_stop and prep.y_ss > 0:
            rss = prep.y_ss - 2.0 * prep.q @ beta_std + beta_std @ prep.G @ beta_std
            rsq = 1.0 - rss / prep.y_ss
            if i > 0 and (rsq >= _DEVMAX or rsq - rsq_prev < _FDEV * rsq):
                n_used = i + 1
                break
            rsq_prev = rsq
    return betas[:n_used], intercepts[:n_used], n_used


def _cv_folds(n: int, k_folds: int, seed: int) -> list[np.ndarray]:
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if k_folds > n:
        raise ValueError(f"k_folds = {k_folds} exceeds n = {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k_folds)]


def cv_lasso(
    prob: DesignProblem,
    k_folds: int = 10,
    seed: int = 0,
    *,
    n_lambda: int = DEFAULT_N_LAMBDA,
    min_ratio: float | None = None,
    rule: str = "min",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    folds: list[np.ndarray] | None = None,
) -> LassoFit:
    """K-fold cross-validated penalty selection with warm-started paths.

    The grid comes from :func:`lambda_path` on the full data; each fold
    refits the whole path on its training rows and scores weighted mean
    squared error on the held-out rows. ``rule = "min"`` selects the
    penalty minimizing mean CV error (ties break toward the larger
    penalty); ``rule = "1se"`` selects the largest penalty whose mean error
    is within one standard error of the minimum. The returned model is the
    full-data fit at the selected penalty. Deterministic given ``seed``.

    ``folds`` overrides the seeded split with explicit held-out index sets
    (must partition the rows).
    """
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown selection rule {rule!r}")
    n = prob.n
    if folds is None:
        folds = _cv_folds(n, k_folds, seed)
    else:
        folds = [np.asarray(f, dtype=np.intp) for f in folds]
        stacked = np.sort(np.concatenate(folds))
        if len(folds) < 2 or not np.array_equal(stacked, np.arange(n)):
            raise ValueError("explicit folds must partition the rows into >= 2 sets")
    for f in folds:
        if f.size < 2:
            raise DataError("cross-validation fold has fewer than 2 observations")

    y_eff = prob.y - prob.offset
    w = prob.weights

    # Master grid from the full data, truncated where its fit saturates;
    # the full-data solutions double as the refits at the selected penalty.
    lambdas = lambda_path(prob, n_lambda=n_lambda, min_ratio=min_ratio)
    prep_full = _prepare(prob.X, y_eff, w, True, True)
    betas_full, intercepts_full, n_used = _path_solutions(
        prep_full, lambdas, tol, max_iter, early_stop=True)
    lambdas = lambdas[:n_used]

    errs = np.empty((len(folds), lambdas.size))
    for fi, heldout in enumerate(folds):
        train = np.setdiff1d(np.arange(n), heldout, assume_unique=True)
        prep = _prepare(prob.X[train], y_eff[train], w[train], True, True)
        betas, intercepts, m = _path_solutions(prep, lambdas, tol, max_iter,
                                               early_stop=True)
        if m < lambdas.size:
            # This fold saturated before the master grid ended; reuse its
            # last fit for the remaining penalties.
            pad = lambdas.size - m
            betas = np.vstack([betas, np.repeat(betas[-1:], pad, axis=0)])
            intercepts = np.concatenate([intercepts, np.repeat(intercepts[-1], pad)])
        preds = prob.X[heldout] @ betas.T + intercepts
        resid = y_eff[heldout, None] - preds
        wh = w[heldout]
        errs[fi] = (wh @ (resid * resid)) / wh.sum()

    cv_mean = errs.mean(axis=0)
    cv_se = errs.std(axis=0, ddof=1) / np.sqrt(len(folds))

    i_min = int(np.argmin(cv_mean))  # first minimum = largest lambda on ties
    if rule == "1se":
        threshold = cv_mean[i_min] + cv_se[i_min]
        i_sel = int(np.flatnonzero(cv_mean <= threshold)[0])
    else:
        i_sel = i_min

    solution = LassoSolution(
        beta=betas_full[i_sel],
        intercept=float(intercepts_full[i_sel]),
        lam=float(lambdas[i_sel]),
        n_sweeps=0,
        converged=True,
        degenerate=prep_full.degenerate.copy(),
    )
    return LassoFit(
        beta=solution.beta,
        intercept=solution.intercept,
        lambda_selected=float(lambdas[i_sel]),
        lambdas=lambdas,
        cv_mean=cv_mean,
        cv_se=cv_se,
        rule=rule,
        solution=solution,
    )
