"""catefuse: conditional average treatment effect estimation for randomized
trials, borrowing strength from large observational studies under a sparse
outcome-shift model.

The package ships a from-scratch cross-validated lasso solver, a two-study
simulator with known ground truth, five sklearn-style effect estimators, a
replicated benchmark harness, and a CLI (``catefuse``).
"""

from .data import (PropensitySpec, StudyDataset, read_csv, split_folds,
                   stratified_folds, write_csv)
from .estimators import (ArmModels, BaseCateEstimator, CateModel, CateParts,
                         Cface, CrossFitRobustFusedCate, FusedCate, METHODS,
                         NaiveRctCate, OsOutcomeModels, RctCfaceCate,
                         RobustFusedCate, calibrate, cface_eval,
                         make_estimator, pseudo_outcome)
from .evaluate import (ExperimentReport, ExperimentSpec, ReportRow,
                       emit_report, rmse_cate, run_experiment)
from .exceptions import (CatefuseError, ConvergenceError, DataError,
                         PositivityError, UsageError)
from .lasso import (DesignProblem, LassoFit, LassoSolution, cv_lasso,
                    fit_lasso, kkt_violation, lambda_path,
                    penalized_objective, soft_threshold)
from .simulator import (GroundTruth, SimConfig, drop_modifiers,
                       effect_modifiers, gen_os, gen_rct, gen_truth,
                       make_covariance, sample_mvn, simulate, true_cate)

__version__ = "0.1.0"

__all__ = [
    "ArmModels", "BaseCateEstimator", "CateModel", "CateParts", "CatefuseError",
    "Cface", "ConvergenceError", "CrossFitRobustFusedCate", "DataError",
    "DesignProblem", "ExperimentReport", "ExperimentSpec", "FusedCate",
    "GroundTruth", "LassoFit", "LassoSolution", "METHODS", "NaiveRctCate",
    "OsOutcomeModels", "PositivityError", "PropensitySpec", "RctCfaceCate",
    "ReportRow", "RobustFusedCate", "SimConfig", "StudyDataset", "UsageError",
    "calibrate", "cface_eval", "cv_lasso", "drop_modifiers", "effect_modifiers",
    "emit_report", "fit_lasso", "gen_os", "gen_rct", "gen_truth",
    "kkt_violation", "lambda_path", "make_covariance", "make_estimator",
    "penalized_objective", "pseudo_outcome", "read_csv", "rmse_cate",
    "run_experiment", "sample_mvn", "simulate", "soft_threshold",
    "split_folds", "stratified_folds", "true_cate", "write_csv",
]
