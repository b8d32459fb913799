"""Synthetic two-study data generation with known ground truth.

Covariates are multivariate normal with an AR(1) covariance (every
off-diagonal entry nonzero). Outcomes are sparse linear models per
treatment arm; the trial population perturbs the observational
coefficients by a sparse per-arm shift, shifts the covariate means on a
few coordinates, and randomizes treatment with probability 1/2. An
optional misspecification adds a quadratic (or sine) term to every active
coefficient's contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.optimize import brentq
from scipy.special import expit

from .data import PropensitySpec, StudyDataset, require_aligned_features
from .exceptions import DataError

ARMS = (-1, 1)
_PROBE_DRAWS = 100_000
_MIN_TREATED_FRACTION = 1.0 / 3.0


@dataclass
class SimConfig:
    """Data-generating configuration. Defaults reproduce the benchmark DGP."""

    n_r: int = 250
    n_o: int = 10_000
    p: int = 100
    support_size: int = 10
    noise_sd: float = 1.0 / 3.0
    os_logistic_dim: int = 10
    shift_covariates: int = 10
    outcome_shift_per_arm: int = 2
    misspecified: bool = False
    misspec_kind: str = "quadratic"
    removed_modifier_fraction: float = 0.0
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n_r, self.n_o, self.p, self.support_size) < 1:
            raise DataError("n_r, n_o, p and support_size must be positive")
        if not 0 <= self.support_size <= self.p:
            raise DataError("support_size must not exceed p")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be nonnegative")
        for name in ("os_logistic_dim", "shift_covariates", "outcome_shift_per_arm"):
            v = getattr(self, name)
            if not 0 <= v <= self.p:
                raise DataError(f"{name} must lie in [0, p]")
        if self.os_logistic_dim < 1:
            raise DataError("os_logistic_dim must be positive")
        if not 0.0 <= self.removed_modifier_fraction <= 0.5:
            raise DataError("removed_modifier_fraction must lie in [0, 0.5]")
        if self.misspec_kind not in ("quadratic", "sine"):
            raise DataError(f"unknown misspec_kind {self.misspec_kind!r}")


@dataclass
class GroundTruth:
    """Planted coefficients and nuisances; evaluates true outcome means."""

    beta_o: dict[int, np.ndarray]
    beta_r: dict[int, np.ndarray]
    quad_terms: dict[tuple[str, int], dict[int, float]]
    rct_mean_shift: np.ndarray
    os_propensity: PropensitySpec
    misspec_kind: str = "quadratic"
    removed_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.intp))

    def coefficients(self, study: str, arm: int) -> np.ndarray:
        return (self.beta_o if study == "o" else self.beta_r)[arm]

    def mean_outcome(self, study: str, arm: int, X) -> np.ndarray:
        """True conditional outcome mean for one arm, on full covariates."""
        X = np.asarray(X, dtype=np.float64)
        mu = X @ self.coefficients(study, arm)
        terms = self.quad_terms.get((study, arm))
        if terms:
            idx = np.fromiter(terms.keys(), dtype=np.intp)
            m = np.fromiter(terms.values(), dtype=np.float64)
            basis = X[:, idx] ** 2 if self.misspec_kind == "quadratic" else np.sin(X[:, idx])
            mu = mu + basis @ m
        return mu

    def cate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        out = self.mean_outcome("r", 1, X) - self.mean_outcome("r", -1, X)
        return float(out[0]) if squeeze else out


def true_cate(truth: GroundTruth, x):
    """True treatment effect at ``x`` (a point or a matrix of points)."""
    return truth.cate(x)


def make_covariance(p: int, rho: float) -> np.ndarray:
    """AR(1) covariance with unit variances: Sigma[j, k] = rho^|j - k|."""
    if not -1.0 < rho < 1.0:
        raise DataError(f"rho must lie in (-1, 1), got {rho}")
    if rho == 0.0:
        raise DataError("rho = 0 gives a diagonal covariance; off-diagonals must be nonzero")
    return toeplitz(rho ** np.arange(p))


def sample_mvn(n: int, mean, cov, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from N(mean, cov) via Cholesky; requires cov SPD."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise DataError("covariance must be a symmetric square matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError("covariance not positive definite") from None
    mean = np.asarray(mean, dtype=np.float64)
    return mean + rng.standard_normal((n, cov.shape[0])) @ chol.T


def _signed_uniform(rng: np.random.Generator, lo: float, hi: float, size: int) -> np.ndarray:
    mags = rng.uniform(lo, hi, size)
    signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return signs * mags


def _tune_intercept(scores: np.ndarray, target: float) -> float:
    """Smallest intercept lifting mean(expit(scores + c)) to ``target``.

    Returns 0 when the fraction already meets the target at zero intercept.
    """
    if float(expit(scores).mean()) >= target:
        return 0.0
    hi = 1.0
    while float(expit(scores + hi).mean()) < target:
        hi *= 2.0
        if hi > 1e6:
            raise DataError("cannot reach the target treated fraction")
    return float(brentq(lambda c: float(expit(scores + c).mean()) - target, 0.0, hi,
                        xtol=1e-12))


def gen_truth(cfg: SimConfig, rng: np.random.Generator) -> GroundTruth:
    """Draw planted coefficients, shifts and the OS assignment model.

    Per arm: a random support of ``support_size`` coefficients with
    magnitudes in [1/3, 2/3] and random signs; the trial arm adds a
    perturbation of magnitude [1/2, 1] on ``outcome_shift_per_arm`` random
    coordinates. Trial covariate means move by [1/4, 1/2] in magnitude on
    ``shift_covariates`` random coordinates. The OS assignment is logistic
    on ``os_logistic_dim`` random covariates with Uniform(-1, 1) weights;
    its intercept is tuned on a Monte-Carlo probe so the expected treated
    fraction is at least one third.
    """
    p = cfg.p
    beta_o: dict[int, np.ndarray] = {}
    beta_r: dict[int, np.ndarray] = {}
    for arm in ARMS:
        beta = np.zeros(p)
        support = rng.choice(p, size=cfg.support_size, replace=False)
        beta[support] = _signed_uniform(rng, 1.0 / 3.0, 2.0 / 3.0, cfg.support_size)
        beta_o[arm] = beta
    for arm in ARMS:
        shifted = beta_o[arm].copy()
        if cfg.outcome_shift_per_arm > 0:
            coords = rng.choice(p, size=cfg.outcome_shift_per_arm, replace=False)
            shifted[coords] += _signed_uniform(rng, 0.5, 1.0, cfg.outcome_shift_per_arm)
        beta_r[arm] = shifted

    rct_mean_shift = np.zeros(p)
    if cfg.shift_covariates > 0:
        coords = rng.choice(p, size=cfg.shift_covariates, replace=False)
        rct_mean_shift[coords] = _signed_uniform(rng, 0.25, 0.5, cfg.shift_covariates)

    cov = make_covariance(p, cfg.rho)
    prop_idx = rng.choice(p, size=cfg.os_logistic_dim, replace=False)
    prop_w = rng.uniform(-1.0, 1.0, cfg.os_logistic_dim)
    probe = sample_mvn(_PROBE_DRAWS, np.zeros(cfg.os_logistic_dim),
                       cov[np.ix_(prop_idx, prop_idx)], rng)
    intercept = _tune_intercept(probe @ prop_w, _MIN_TREATED_FRACTION)
    coef = np.zeros(p)
    coef[prop_idx] = prop_w
    os_propensity = PropensitySpec(kind="logistic", coef=coef, intercept=intercept)

    quad_terms: dict[tuple[str, int], dict[int, float]] = {}
    if cfg.misspecified:
        for study, betas in (("o", beta_o), ("r", beta_r)):
            for arm in ARMS:
                active = np.flatnonzero(betas[arm])
                vals = rng.uniform(0.25, 0.5, active.size)
                quad_terms[(study, arm)] = {int(j): float(m) for j, m in zip(active, vals)}

    return GroundTruth(beta_o, beta_r, quad_terms, rct_mean_shift, os_propensity,
                       misspec_kind=cfg.misspec_kind)


def _observed_outcome(truth: GroundTruth, study: str, X: np.ndarray, A: np.ndarray,
                      noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    mu = np.where(A == 1,
                  truth.mean_outcome(study, 1, X),
                  truth.mean_outcome(study, -1, X))
    return mu + noise_sd * rng.standard_normal(X.shape[0])


def _feature_names(p: int) -> list[str]:
    return [f"x{j + 1}" for j in range(p)]


def gen_os(cfg: SimConfig, truth: GroundTruth, rng: np.random.Generator) -> StudyDataset:
    """Observational study: confounded assignment through the logistic model."""
    cov = make_covariance(cfg.p, cfg.rho)
    X = sample_mvn(cfg.n_o, np.zeros(cfg.p), cov, rng)
    pi = truth.os_propensity.prob_plus1(X)
    A = np.where(rng.random(cfg.n_o) < pi, 1, -1).astype(np.int8)
    Y = _observed_outcome(truth, "o", X, A, cfg.noise_sd, rng)
    return StudyDataset("o", X, A, Y, _feature_names(cfg.p))


def gen_rct(cfg: SimConfig, truth: GroundTruth, rng: np.random.Generator) -> StudyDataset:
    """Trial data: shifted covariate means, fair-coin treatment assignment."""
    cov = make_covariance(cfg.p, cfg.rho)
    X = sample_mvn(cfg.n_r, truth.rct_mean_shift, cov, rng)
    A = np.where(rng.random(cfg.n_r) < 0.5, 1, -1).astype(np.int8)
    Y = _observed_outcome(truth, "r", X, A, cfg.noise_sd, rng)
    return StudyDataset("r", X, A, Y, _feature_names(cfg.p))


def effect_modifiers(truth: GroundTruth) -> np.ndarray:
    """Coordinates whose arm coefficients differ, in either study."""
    diff = (truth.beta_r[1] != truth.beta_r[-1]) | (truth.beta_o[1] != truth.beta_o[-1])
    return np.flatnonzero(diff)


def drop_modifiers(
    os_ds: StudyDataset,
    rct_ds: StudyDataset,
    truth: GroundTruth,
    fraction: float,
    rng: np.random.Generator,
) -> tuple[StudyDataset, StudyDataset, np.ndarray]:
    """Delete a random fraction of effect-modifier columns from both studies.

    ceil(fraction * #modifiers) columns are removed, the same ones from both
    datasets. ``truth.removed_indices`` records them so true-effect
    evaluation keeps using the full covariate vector.
    """
    if not 0.0 <= fraction <= 0.5:
        raise DataError(f"removal fraction must lie in [0, 0.5], got {fraction}")
    require_aligned_features(os_ds, rct_ds)
    modifiers = effect_modifiers(truth)
    n_remove = math.ceil(fraction * modifiers.size)
    if n_remove == 0:
        truth.removed_indices = np.array([], dtype=np.intp)
        return os_ds, rct_ds, truth.removed_indices
    removed = np.sort(rng.choice(modifiers, size=n_remove, replace=False)).astype(np.intp)
    kept_names = [nm for j, nm in enumerate(os_ds.feature_names) if j not in set(removed.tolist())]

    def strip(ds: StudyDataset) -> StudyDataset:
        return StudyDataset(ds.study, np.delete(ds.X, removed, axis=1), ds.A, ds.Y,
                            kept_names, dict(ds.meta))

    truth.removed_indices = removed
    return strip(os_ds), strip(rct_ds), removed


def simulate(cfg: SimConfig) -> tuple[GroundTruth, StudyDataset, StudyDataset]:
    """Full pipeline: truth, observational data, trial data, optional removal.

    Bit-reproducible given ``cfg.seed``; the four stages draw from
    independently spawned streams.
    """
    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    truth = gen_truth(cfg, np.random.default_rng(streams[0]))
    os_ds = gen_os(cfg, truth, np.random.default_rng(streams[1]))
    rct_ds = gen_rct(cfg, truth, np.random.default_rng(streams[2]))
    if cfg.removed_modifier_fraction > 0:
        os_ds, rct_ds, _ = drop_modifiers(os_ds, rct_ds, truth,
                                          cfg.removed_modifier_fraction,
                                          np.random.default_rng(streams[3]))
    return truth, os_ds, rct_ds
