"""Linear CATE estimators for a trial, with strength borrowed from a large
observational study under a sparse outcome-shift model.

All estimators follow the scikit-learn protocol: hyperparameters in
``__init__``, ``fit(X, a, y)`` with treatment ``a`` in {-1, +1}, and
``predict(X)`` returning the estimated treatment effect per row. Every fit
is a pure function of (data, random_state).

Five methods are provided:

* :class:`NaiveRctCate` - per-arm lasso on the trial alone, contrast taken.
* :class:`RctCfaceCate` - pseudo-outcome regression where the variance-
  reducing nuisance m(x) is the CFACE (the counterfactually crossed mean
  outcome, pi_{+1} mu_{-1} + pi_{-1} mu_{+1}) estimated from the trial.
* :class:`FusedCate` - per-arm sparse shift regressions on top of frozen
  observational arm models (no calibration step).
* :class:`RobustFusedCate` - calibrates the observational arm models to the
  trial first, then fits a sparse correction to the pseudo-outcome
  residual.
* :class:`CrossFitRobustFusedCate` - the robust variant with calibration
  and correction estimated on disjoint folds, averaged across rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_matrix, as_treatment, as_vector, check_propensity
from .data import stratified_folds
from .exceptions import DataError
from .lasso import DesignProblem, LassoFit, cv_lasso

ARMS = (-1, 1)
METHODS = ("naive", "cface-rct", "proposed", "robust", "crossfit")

# Stable sub-seed keys so each internal regression draws its CV folds from
# a stream that depends only on (random_state, role).
_ROLE_KEYS = {
    "arm-1": 11,
    "arm+1": 12,
    "pseudo": 13,
    "calibrate-1": 14,
    "calibrate+1": 15,
    "correction": 16,
}


def _role_seed(random_state: int, role: str) -> int:
    key = _ROLE_KEYS[role]
    return int(np.random.SeedSequence((int(random_state), key)).generate_state(1)[0])


@dataclass
class ArmModels:
    """Linear outcome models for both treatment arms.

    ``source`` records where they were fitted ("os", "rct") or that they
    are observational models calibrated to the trial ("calibrated"), in
    which case the additive adjustments are kept so the calibrated
    coefficients remain reconstructible as base + delta.
    """

    coef_minus: np.ndarray
    intercept_minus: float
    coef_plus: np.ndarray
    intercept_plus: float
    source: str
    delta_minus: np.ndarray | None = None
    delta_intercept_minus: float = 0.0
    delta_plus: np.ndarray | None = None
    delta_intercept_plus: float = 0.0
    lambdas: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("os", "rct", "calibrated"):
            raise DataError(f"unknown arm-model source {self.source!r}")
        if self.coef_minus.shape != self.coef_plus.shape:
            raise DataError("arm coefficient vectors must have equal length")
        if self.source == "calibrated" and (self.delta_minus is None or self.delta_plus is None):
            raise DataError("calibrated arm models must record their adjustments")

    @property
    def p(self) -> int:
        return self.coef_minus.shape[0]

    def coef(self, arm: int) -> np.ndarray:
        return self.coef_plus if arm == 1 else self.coef_minus

    def intercept(self, arm: int) -> float:
        return self.intercept_plus if arm == 1 else self.intercept_minus

    def predict(self, X, arm: int) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef(arm) + self.intercept(arm)

    def contrast(self) -> tuple[np.ndarray, float]:
        """Arm difference (+1 minus -1): coefficient vector and intercept."""
        return self.coef_plus - self.coef_minus, self.intercept_plus - self.intercept_minus


@dataclass
class Cface:
    """Counterfactually crossed mean outcome m(x) under a constant propensity.

    Evaluates pi_{+1} mu_{-1}(x) + pi_{-1} mu_{+1}(x): each arm's mean is
    weighted by the probability of receiving the *other* arm.
    """

    pi_plus1: float
    models: ArmModels

    def __post_init__(self):
        self.pi_plus1 = check_propensity(self.pi_plus1)


def cface_eval(cface: Cface, x) -> np.ndarray | float:
    """Evaluate the crossed mean at one point or row-wise on a matrix."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    out = (cface.pi_plus1 * cface.models.predict(X, -1)
           + (1.0 - cface.pi_plus1) * cface.models.predict(X, 1))
    return float(out[0]) if squeeze else out


def pseudo_outcome(y, a, m_x, pi_a):
    """Transformed outcome a * (y - m(x)) / pi_a whose conditional mean is
    the treatment effect. ``pi_a`` is the assignment probability of the arm
    actually received and must lie in (0, 1)."""
    pi_a = np.asarray(pi_a, dtype=np.float64)
    if np.any(pi_a <= 0.0) or np.any(pi_a >= 1.0):
        from .exceptions import PositivityError

        raise PositivityError("assignment probabilities must lie strictly inside (0, 1)")
    return np.asarray(a, dtype=np.float64) * (np.asarray(y, dtype=np.float64) - m_x) / pi_a


@dataclass
class CateParts:
    """Additive decomposition of a fused estimate's coefficients."""

    os_coef: np.ndarray
    os_intercept: float
    calibration_coef: np.ndarray
    calibration_intercept: float
    correction_coef: np.ndarray
    correction_intercept: float

    def total(self) -> tuple[np.ndarray, float]:
        coef = (self.os_coef + self.calibration_coef) + self.correction_coef
        intercept = (self.os_intercept + self.calibration_intercept) + self.correction_intercept
        return coef, intercept


@dataclass
class CateModel:
    """A fitted linear treatment-effect model tau(x) = tau_coef' x + intercept."""

    tau_coef: np.ndarray
    intercept: float
    method: str
    parts: CateParts | None = None
    lambdas: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.parts is not None:
            coef, intercept = self.parts.total()
            if not (np.array_equal(coef, self.tau_coef) and intercept == self.intercept):
                raise DataError("parts do not reassemble into the stated coefficients")

    @property
    def p(self) -> int:
        return self.tau_coef.shape[0]

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.tau_coef + self.intercept


def _check_fit_inputs(X, a, y):
    X = as_matrix(X, "X")
    a = as_treatment(a, X.shape[0])
    y = as_vector(y, X.shape[0], "y")
    for arm in ARMS:
        if not np.any(a == arm):
            raise DataError(f"treatment arm {arm:+d} has no observations")
    return X, a, y


def _resolve_propensity(propensity, a) -> float:
    if propensity is None:
        return check_propensity(float(np.mean(a == 1)))
    return check_propensity(propensity)


def _fit_arm_models(X, a, y, source: str, k_folds: int, lambda_rule: str,
                    random_state: int) -> ArmModels:
    fits: dict[int, LassoFit] = {}
    for arm in ARMS:
        rows = np.flatnonzero(a == arm)
        prob = DesignProblem(X[rows], y[rows])
        seed = _role_seed(random_state, f"arm{arm:+d}")
        fits[arm] = cv_lasso(prob, k_folds, seed, rule=lambda_rule)
    return ArmModels(
        coef_minus=fits[-1].beta,
        intercept_minus=fits[-1].intercept,
        coef_plus=fits[1].beta,
        intercept_plus=fits[1].intercept,
        source=source,
        lambdas={f"arm{arm:+d}": fits[arm].lambda_selected for arm in ARMS},
    )


def calibrate(X, a, y, os_models: ArmModels, *, k_folds: int = 10,
              lambda_rule: str = "min", random_state: int = 0) -> ArmModels:
    """Calibrate observational arm models to trial data.

    For each arm, the trial residual y - mu_os(x) on that arm's rows is
    regressed on x with an L1 penalty (the observational prediction enters
    as a fit offset), giving a sparse additive adjustment per arm. The two
    arms are independent problems because each adjustment only touches its
    own arm's rows.
    """
    X, a, y = _check_fit_inputs(X, a, y)
    if os_models.source != "os":
        raise DataError("calibration expects arm models fitted on the observational study")
    if os_models.p != X.shape[1]:
        raise DataError(f"arm models have {os_models.p} features, data has {X.shape[1]}")
    deltas: dict[int, LassoFit] = {}
    for arm in ARMS:
        rows = np.flatnonzero(a == arm)
        offset = os_models.predict(X[rows], arm)
        prob = DesignProblem(X[rows], y[rows], offset=offset)
        seed = _role_seed(random_state, f"calibrate{arm:+d}")
        deltas[arm] = cv_lasso(prob, k_folds, seed, rule=lambda_rule)
    return ArmModels(
        coef_minus=os_models.coef_minus + deltas[-1].beta,
        intercept_minus=os_models.intercept_minus + deltas[-1].intercept,
        coef_plus=os_models.coef_plus + deltas[1].beta,
        intercept_plus=os_models.intercept_plus + deltas[1].intercept,
        source="calibrated",
        delta_minus=deltas[-1].beta,
        delta_intercept_minus=deltas[-1].intercept,
        delta_plus=deltas[1].beta,
        delta_intercept_plus=deltas[1].intercept,
        lambdas={f"calibrate{arm:+d}": deltas[arm].lambda_selected for arm in ARMS},
    )


def _correction_fit(X, a, y, models: ArmModels, pi_plus1: float, k_folds: int,
                    lambda_rule: str, random_state: int) -> LassoFit:
    """Sparse correction on top of a preliminary contrast (the final fused
    stage): lasso of the pseudo-outcome minus the preliminary effect."""
    mu_plus = models.predict(X, 1)
    mu_minus = models.predict(X, -1)
    m_x = pi_plus1 * mu_minus + (1.0 - pi_plus1) * mu_plus
    pi_a = np.where(a == 1, pi_plus1, 1.0 - pi_plus1)
    z = pseudo_outcome(y, a, m_x, pi_a)
    preliminary = mu_plus - mu_minus
    prob = DesignProblem(X, z, offset=preliminary)
    seed = _role_seed(random_state, "correction")
    return cv_lasso(prob, k_folds, seed, rule=lambda_rule)


class BaseCateEstimator(BaseEstimator):
    """Shared prediction surface for the fitted linear effect models."""

    model_: CateModel

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"{type(self).__name__} is not fitted yet; call fit() first")

    def predict(self, X) -> np.ndarray:
        """Estimated treatment effect for each row of ``X``."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.model_.p:
            raise DataError(
                f"X has {X.shape[1]} columns, model expects {self.model_.p}")
        return self.model_.predict(X)

    @property
    def tau_coef_(self) -> np.ndarray:
        self._check_fitted()
        return self.model_.tau_coef

    @property
    def intercept_(self) -> float:
        self._check_fitted()
        return self.model_.intercept


class OsOutcomeModels(BaseEstimator):
    """Per-arm penalized outcome regressions on observational data.

    The fitted arm models are the frozen first stage consumed by the fused
    estimators. Each arm is fitted on its own rows only, so perturbing one
    arm's outcomes cannot move the other arm's model.
    """

    def __init__(self, k_folds: int = 10, lambda_rule: str = "min", random_state: int = 0):
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y):
        X, a, y = _check_fit_inputs(X, a, y)
        self.arm_models_ = _fit_arm_models(X, a, y, "os", self.k_folds,
                                           self.lambda_rule, self.random_state)
        return self

    def predict(self, X, arm: int) -> np.ndarray:
        if not hasattr(self, "arm_models_"):
            raise NotFittedError("OsOutcomeModels is not fitted yet; call fit() first")
        return self.arm_models_.predict(as_matrix(X, "X"), arm)


def _resolve_arm_models(os_models) -> ArmModels:
    if os_models is None:
        raise DataError("this estimator requires fitted observational arm models")
    if isinstance(os_models, OsOutcomeModels):
        if not hasattr(os_models, "arm_models_"):
            raise NotFittedError("os_models must be fitted before use")
        return os_models.arm_models_
    if isinstance(os_models, ArmModels):
        return os_models
    raise DataError("os_models must be an OsOutcomeModels instance or ArmModels")


class NaiveRctCate(BaseCateEstimator):
    """Per-arm lasso on trial data alone; the effect is the arm contrast."""

    def __init__(self, k_folds: int = 10, lambda_rule: str = "min", random_state: int = 0):
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y):
        X, a, y = _check_fit_inputs(X, a, y)
        models = _fit_arm_models(X, a, y, "rct", self.k_folds, self.lambda_rule,
                                 self.random_state)
        coef, intercept = models.contrast()
        self.arm_models_ = models
        self.model_ = CateModel(coef, intercept, "naive", lambdas=dict(models.lambdas))
        return self


class RctCfaceCate(BaseCateEstimator):
    """Pseudo-outcome regression with the crossed-mean nuisance from the trial.

    Per-arm lassos on the trial estimate the arm means; their crossed
    mixture under the randomization probability forms m(x); the effect is a
    lasso of a(y - m(x)) / pi_a on x.

    ``propensity`` is the trial randomization probability of arm +1; when
    omitted it is estimated as the empirical treated fraction. It must be
    the probability actually used for assignment.
    """

    def __init__(self, propensity: float | None = None, k_folds: int = 10,
                 lambda_rule: str = "min", random_state: int = 0):
        self.propensity = propensity
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y):
        X, a, y = _check_fit_inputs(X, a, y)
        pi = _resolve_propensity(self.propensity, a)
        models = _fit_arm_models(X, a, y, "rct", self.k_folds, self.lambda_rule,
                                 self.random_state)
        cface = Cface(pi, models)
        m_x = cface_eval(cface, X)
        pi_a = np.where(a == 1, pi, 1.0 - pi)
        z = pseudo_outcome(y, a, m_x, pi_a)
        fit = cv_lasso(DesignProblem(X, z), self.k_folds,
                       _role_seed(self.random_state, "pseudo"), rule=self.lambda_rule)
        self.cface_ = cface
        lambdas = dict(models.lambdas)
        lambdas["pseudo"] = fit.lambda_selected
        self.model_ = CateModel(fit.beta, fit.intercept, "cface-rct", lambdas=lambdas)
        return self


class FusedCate(BaseCateEstimator):
    """Per-arm sparse shift regressions on frozen observational models.

    For each arm a with constant assignment probability pi_a and
    alpha = pi_{-1} / pi_{+1}, the arm's rows are fitted with response
    (a / pi_a) y - a (1 + alpha^a) mu_os(x) against design
    a (1 + alpha^a) x, an L1-penalized regression whose coefficients are
    the outcome-shift adjustments. The effect is the contrast of the
    adjusted arm models.
    """

    def __init__(self, os_models=None, propensity: float | None = None,
                 k_folds: int = 10, lambda_rule: str = "min", random_state: int = 0):
        self.os_models = os_models
        self.propensity = propensity
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y):
        X, a, y = _check_fit_inputs(X, a, y)
        base = _resolve_arm_models(self.os_models)
        if base.p != X.shape[1]:
            raise DataError(f"arm models have {base.p} features, data has {X.shape[1]}")
        pi_plus = _resolve_propensity(self.propensity, a)
        alpha = (1.0 - pi_plus) / pi_plus
        deltas: dict[int, LassoFit] = {}
        delta_intercepts: dict[int, float] = {}
        for arm in ARMS:
            rows = np.flatnonzero(a == arm)
            scale = arm * (1.0 + alpha ** arm)  # equals arm / pi_arm
            u = scale * y[rows] - scale * base.predict(X[rows], arm)
            design = scale * X[rows]
            seed = _role_seed(self.random_state, f"calibrate{arm:+d}")
            fit = cv_lasso(DesignProblem(design, u), self.k_folds, seed,
                           rule=self.lambda_rule)
            deltas[arm] = fit
            delta_intercepts[arm] = fit.intercept / scale
        self.shift_models_ = ArmModels(
            coef_minus=base.coef_minus + deltas[-1].beta,
            intercept_minus=base.intercept_minus + delta_intercepts[-1],
            coef_plus=base.coef_plus + deltas[1].beta,
            intercept_plus=base.intercept_plus + delta_intercepts[1],
            source="calibrated",
            delta_minus=deltas[-1].beta,
            delta_intercept_minus=delta_intercepts[-1],
            delta_plus=deltas[1].beta,
            delta_intercept_plus=delta_intercepts[1],
            lambdas={f"shift{arm:+d}": deltas[arm].lambda_selected for arm in ARMS},
        )
        os_coef, os_intercept = base.contrast()
        parts = CateParts(
            os_coef=os_coef,
            os_intercept=os_intercept,
            calibration_coef=deltas[1].beta - deltas[-1].beta,
            calibration_intercept=delta_intercepts[1] - delta_intercepts[-1],
            correction_coef=np.zeros(base.p),
            correction_intercept=0.0,
        )
        coef, intercept = parts.total()
        self.model_ = CateModel(coef, intercept, "proposed", parts=parts,
                                lambdas=dict(self.shift_models_.lambdas))
        return self


class RobustFusedCate(BaseCateEstimator):
    """Calibration plus a pseudo-outcome correction stage.

    First the observational arm models are calibrated to the trial
    (:func:`calibrate`); their contrast is a preliminary effect estimate.
    Then the pseudo-outcome built from the calibrated crossed mean is
    regressed on x with the preliminary effect as offset: when the
    preliminary estimate is already good, the correction is penalized to
    (near) zero, otherwise it repairs the approximation.
    """

    def __init__(self, os_models=None, propensity: float | None = None,
                 k_folds: int = 10, lambda_rule: str = "min", random_state: int = 0):
        self.os_models = os_models
        self.propensity = propensity
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y):
        X, a, y = _check_fit_inputs(X, a, y)
        base = _resolve_arm_models(self.os_models)
        pi_plus = _resolve_propensity(self.propensity, a)
        calibrated = calibrate(X, a, y, base, k_folds=self.k_folds,
                               lambda_rule=self.lambda_rule,
                               random_state=self.random_state)
        correction = _correction_fit(X, a, y, calibrated, pi_plus, self.k_folds,
                                     self.lambda_rule, self.random_state)
        os_coef, os_intercept = base.contrast()
        parts = CateParts(
            os_coef=os_coef,
            os_intercept=os_intercept,
            calibration_coef=calibrated.delta_plus - calibrated.delta_minus,
            calibration_intercept=(calibrated.delta_intercept_plus
                                   - calibrated.delta_intercept_minus),
            correction_coef=correction.beta,
            correction_intercept=correction.intercept,
        )
        coef, intercept = parts.total()
        lambdas = dict(calibrated.lambdas)
        lambdas["correction"] = correction.lambda_selected
        self.calibrated_models_ = calibrated
        self.model_ = CateModel(coef, intercept, "robust", parts=parts, lambdas=lambdas)
        return self


class CrossFitRobustFusedCate(BaseCateEstimator):
    """Robust fused estimator with cross-fitted calibration and correction.

    The trial is split into ``n_folds`` arm-stratified folds. Round k
    calibrates the observational models on all folds except k (the nuisance
    sample) and fits the correction stage on fold k alone, so within every
    round the two stages never see the same rows. The final coefficients
    average both the per-round calibrated contrasts and the per-round
    corrections.
    """

    def __init__(self, os_models=None, n_folds: int = 5, propensity: float | None = None,
                 k_folds: int = 10, lambda_rule: str = "min", random_state: int = 0):
        self.os_models = os_models
        self.n_folds = n_folds
        self.propensity = propensity
        self.k_folds = k_folds
        self.lambda_rule = lambda_rule
        self.random_state = random_state

    def fit(self, X, a, y, folds: list[np.ndarray] | None = None):
        X, a, y = _check_fit_inputs(X, a, y)
        base = _resolve_arm_models(self.os_models)
        pi_plus = _resolve_propensity(self.propensity, a)
        if folds is None:
            folds = stratified_folds(a, self.n_folds, self.random_state)
        n = X.shape[0]
        calib_coefs, calib_intercepts = [], []
        corr_coefs, corr_intercepts = [], []
        for heldout in folds:
            rest = np.setdiff1d(np.arange(n), heldout, assume_unique=True)
            calibrated = calibrate(X[rest], a[rest], y[rest], base,
                                   k_folds=self.k_folds, lambda_rule=self.lambda_rule,
                                   random_state=self.random_state)
            correction = _correction_fit(X[heldout], a[heldout], y[heldout],
                                         calibrated, pi_plus, self.k_folds,
                                         self.lambda_rule, self.random_state)
            calib_coefs.append(calibrated.delta_plus - calibrated.delta_minus)
            calib_intercepts.append(calibrated.delta_intercept_plus
                                    - calibrated.delta_intercept_minus)
            corr_coefs.append(correction.beta)
            corr_intercepts.append(correction.intercept)
        os_coef, os_intercept = base.contrast()
        parts = CateParts(
            os_coef=os_coef,
            os_intercept=os_intercept,
            calibration_coef=np.mean(calib_coefs, axis=0),
            calibration_intercept=float(np.mean(calib_intercepts)),
            correction_coef=np.mean(corr_coefs, axis=0),
            correction_intercept=float(np.mean(corr_intercepts)),
        )
        coef, intercept = parts.total()
        self.model_ = CateModel(coef, intercept, "crossfit", parts=parts,
                                metadata={"n_folds": len(folds)})
        return self


def make_estimator(method: str, *, os_models=None, propensity: float | None = None,
                   k_folds: int = 10, n_folds_crossfit: int = 5,
                   lambda_rule: str = "min", random_state: int = 0) -> BaseCateEstimator:
    """Instantiate one of the five methods by CLI name."""
    common = dict(k_folds=k_folds, lambda_rule=lambda_rule, random_state=random_state)
    if method == "naive":
        return NaiveRctCate(**common)
    if method == "cface-rct":
        return RctCfaceCate(propensity=propensity, **common)
    if method == "proposed":
        return FusedCate(os_models=os_models, propensity=propensity, **common)
    if method == "robust":
        return RobustFusedCate(os_models=os_models, propensity=propensity, **common)
    if method == "crossfit":
        return CrossFitRobustFusedCate(os_models=os_models, n_folds=n_folds_crossfit,
                                       propensity=propensity, **common)
    raise DataError(f"unknown method {method!r}; choose from {METHODS}")
