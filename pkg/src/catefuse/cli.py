"""Command-line front end: simulate / fit / experiment / report.

Every subcommand accepts ``--config <json>`` whose entries fill in flags
that were not given explicitly (explicit flags win), ``--json-errors`` for
machine-readable failures, and ``--verbose``. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import read_csv, require_aligned_features, write_csv
from .estimators import METHODS, CateModel, CateParts, OsOutcomeModels, make_estimator
from .evaluate import ExperimentReport, ExperimentSpec, emit_report, run_experiment
from .exceptions import ConvergenceError, DataError, UsageError
from .simulator import GroundTruth, SimConfig, simulate

log = logging.getLogger("catefuse")

_ENV_SEED = "CATEFUSE_SEED"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_SIM_DEFAULTS = {
    "n_r": 250, "n_o": 10_000, "p": 100, "support_size": 10,
    "noise_sd": 1.0 / 3.0, "os_logistic_dim": 10, "shift_covariates": 10,
    "outcome_shift_per_arm": 2, "misspecified": False,
    "misspec_kind": "quadratic", "removed_fraction": 0.0, "rho": 0.5,
    "seed": None, "out": None,
}

_FIT_DEFAULTS = {
    "method": None, "rct": None, "os": None, "k": 5, "cv_folds": 10,
    "lambda_rule": "min", "propensity": None, "seed": None, "out": None,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="catefuse", description=__doc__)
    parser.add_argument("--version", action="version", version=f"catefuse {__version__}")
    sub = parser.add_subparsers(dest="subcommand")

    def common(p):
        p.add_argument("--config", help="JSON file merged under explicit flags")
        p.add_argument("--json-errors", action="store_true", default=None)
        p.add_argument("--verbose", action="store_true", default=None)

    p = sub.add_parser("simulate", help="generate the two study CSVs plus a truth sidecar")
    p.add_argument("--n-r", type=int, dest="n_r")
    p.add_argument("--n-o", type=int, dest="n_o")
    p.add_argument("--p", type=int)
    p.add_argument("--support-size", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--os-logistic-dim", type=int)
    p.add_argument("--shift-covariates", type=int)
    p.add_argument("--outcome-shift-per-arm", type=int)
    p.add_argument("--misspecified", action="store_true", default=None)
    p.add_argument("--misspec-kind", choices=("quadratic", "sine"))
    p.add_argument("--removed-fraction", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    common(p)

    p = sub.add_parser("fit", help="fit one method from CSV data, write a model JSON")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--rct", help="trial CSV")
    p.add_argument("--os", help="observational CSV (fused methods)")
    p.add_argument("--k", type=int, help="cross-fitting folds (crossfit method)")
    p.add_argument("--cv-folds", type=int, help="penalty-selection folds")
    p.add_argument("--lambda-rule", choices=("min", "1se"))
    p.add_argument("--propensity", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="model JSON path")
    common(p)

    p = sub.add_parser("experiment", help="run a replicated benchmark grid")
    p.add_argument("--spec", help="experiment spec JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=None)
    common(p)

    p = sub.add_parser("report", help="render a stored report")
    p.add_argument("--report", help="report JSON produced by `experiment`")
    p.add_argument("--format", choices=("csv", "markdown-table", "plotdata"),
                   dest="fmt")
    p.add_argument("--out", help="output directory")
    common(p)
    return parser


def _load_json(path, kind: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {kind} file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {kind} file {path}: {exc}") from exc


def _merge(defaults: dict, ns: argparse.Namespace) -> dict:
    """defaults < --config file < explicit flags."""
    merged = dict(defaults)
    if getattr(ns, "config", None):
        payload = _load_json(ns.config, "config")
        unknown = set(payload) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config fields: {sorted(unknown)}")
        merged.update(payload)
    for key in defaults:
        explicit = getattr(ns, key, None)
        if explicit is not None:
            merged[key] = explicit
    return merged


def _require(merged: dict, key: str, flag: str):
    if merged.get(key) is None:
        raise UsageError(f"missing required option {flag}")
    return merged[key]


def _fallback_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(_ENV_SEED)
    return int(env) if env else 0


def _truth_to_dict(truth: GroundTruth, cfg: SimConfig) -> dict:
    from dataclasses import asdict

    return {
        "config": asdict(cfg),
        "beta_o": {f"{arm:+d}": truth.beta_o[arm].tolist() for arm in (-1, 1)},
        "beta_r": {f"{arm:+d}": truth.beta_r[arm].tolist() for arm in (-1, 1)},
        "rct_mean_shift": truth.rct_mean_shift.tolist(),
        "os_propensity": {
            "kind": truth.os_propensity.kind,
            "coef": truth.os_propensity.coef.tolist(),
            "intercept": truth.os_propensity.intercept,
        },
        "quad_terms": {
            f"{study}{arm:+d}": {str(j): m for j, m in terms.items()}
            for (study, arm), terms in truth.quad_terms.items()
        },
        "misspec_kind": truth.misspec_kind,
        "removed_indices": truth.removed_indices.tolist(),
    }


def _cmd_simulate(ns: argparse.Namespace) -> int:
    opts = _merge(_SIM_DEFAULTS, ns)
    out = Path(_require(opts, "out", "--out"))
    cfg = SimConfig(
        n_r=int(opts["n_r"]), n_o=int(opts["n_o"]), p=int(opts["p"]),
        support_size=int(opts["support_size"]), noise_sd=float(opts["noise_sd"]),
        os_logistic_dim=int(opts["os_logistic_dim"]),
        shift_covariates=int(opts["shift_covariates"]),
        outcome_shift_per_arm=int(opts["outcome_shift_per_arm"]),
        misspecified=bool(opts["misspecified"]),
        misspec_kind=opts["misspec_kind"],
        removed_modifier_fraction=float(opts["removed_fraction"]),
        rho=float(opts["rho"]), seed=_fallback_seed(opts["seed"]),
    )
    truth, os_ds, rct_ds = simulate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(os_ds, out / "os.csv")
    write_csv(rct_ds, out / "rct.csv")
    with open(out / "truth.json", "w") as fh:
        json.dump(_truth_to_dict(truth, cfg), fh, indent=2)
    log.info("wrote %s, %s and %s", out / "rct.csv", out / "os.csv", out / "truth.json")
    return EXIT_OK


def _model_to_dict(model: CateModel, seed: int, feature_names: list[str]) -> dict:
    parts = None
    if model.parts is not None:
        parts = {
            "os_coef": model.parts.os_coef.tolist(),
            "os_intercept": model.parts.os_intercept,
            "calibration_coef": model.parts.calibration_coef.tolist(),
            "calibration_intercept": model.parts.calibration_intercept,
            "correction_coef": model.parts.correction_coef.tolist(),
            "correction_intercept": model.parts.correction_intercept,
        }
    return {
        "method": model.method,
        "tau_coef": model.tau_coef.tolist(),
        "intercept": model.intercept,
        "parts": parts,
        "lambdas": model.lambdas,
        "seeds": {"random_state": seed},
        "feature_names": feature_names,
    }


def load_model(path) -> CateModel:
    """Rebuild a fitted effect model from the JSON written by ``fit``."""
    payload = _load_json(path, "model")
    parts = None
    if payload.get("parts"):
        d = payload["parts"]
        parts = CateParts(
            os_coef=np.asarray(d["os_coef"]), os_intercept=d["os_intercept"],
            calibration_coef=np.asarray(d["calibration_coef"]),
            calibration_intercept=d["calibration_intercept"],
            correction_coef=np.asarray(d["correction_coef"]),
            correction_intercept=d["correction_intercept"],
        )
    return CateModel(
        tau_coef=np.asarray(payload["tau_coef"], dtype=np.float64),
        intercept=float(payload["intercept"]),
        method=payload["method"],
        parts=parts,
        lambdas=payload.get("lambdas", {}),
    )


def _cmd_fit(ns: argparse.Namespace) -> int:
    opts = _merge(_FIT_DEFAULTS, ns)
    method = _require(opts, "method", "--method")
    rct_path = _require(opts, "rct", "--rct")
    out = Path(_require(opts, "out", "--out"))
    seed = _fallback_seed(opts["seed"])
    rct = read_csv(rct_path)
    if rct.study != "r":
        raise DataError(f"{rct_path}: expected study tag 'r', found {rct.study!r}")

    os_est = None
    if method in ("proposed", "robust", "crossfit"):
        os_path = _require(opts, "os", "--os")
        os_ds = read_csv(os_path)
        if os_ds.study != "o":
            raise DataError(f"{os_path}: expected study tag 'o', found {os_ds.study!r}")
        require_aligned_features(rct, os_ds)
        os_est = OsOutcomeModels(
            k_folds=int(opts["cv_folds"]), lambda_rule=opts["lambda_rule"],
            random_state=seed,
        ).fit(os_ds.X, os_ds.A, os_ds.Y)

    est = make_estimator(
        method, os_models=os_est, propensity=opts["propensity"],
        k_folds=int(opts["cv_folds"]), n_folds_crossfit=int(opts["k"]),
        lambda_rule=opts["lambda_rule"], random_state=seed,
    )
    est.fit(rct.X, rct.A, rct.Y)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(_model_to_dict(est.model_, seed, rct.feature_names), fh, indent=2)
    log.info("wrote %s", out)
    return EXIT_OK


def _cmd_experiment(ns: argparse.Namespace) -> int:
    defaults = {"spec": None, "out": None, "jobs": 1}
    opts = _merge(defaults, ns)
    spec_path = _require(opts, "spec", "--spec")
    out = Path(_require(opts, "out", "--out"))
    payload = _load_json(spec_path, "experiment spec")
    if "base_seed" not in payload and os.environ.get(_ENV_SEED):
        payload["base_seed"] = int(os.environ[_ENV_SEED])
    spec = ExperimentSpec.from_dict(payload)
    log.info("running %d cells x %d replicates with %d job(s)",
             len(spec.cells()), spec.replicates, int(opts["jobs"]))
    report = run_experiment(spec, jobs=int(opts["jobs"]))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    emit_report(report, "csv", out)
    log.info("wrote %s and %s", out / "report.json", out / "report.csv")
    return EXIT_OK


def _cmd_report(ns: argparse.Namespace) -> int:
    defaults = {"report": None, "fmt": "csv", "out": None}
    opts = _merge(defaults, ns)
    report_path = _require(opts, "report", "--report")
    out = Path(_require(opts, "out", "--out"))
    report = ExperimentReport.from_dict(_load_json(report_path, "report"))
    paths = emit_report(report, opts["fmt"], out)
    log.info("wrote %s", ", ".join(str(p) for p in paths))
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def parse_args(argv) -> argparse.Namespace:
    """Parse and validate argv; raises :class:`UsageError` on bad usage."""
    ns = _build_parser().parse_args(argv)
    if ns.subcommand is None:
        raise UsageError("a subcommand is required: " + ", ".join(_COMMANDS))
    return ns


def _emit_error(exc: Exception, json_errors: bool) -> None:
    if json_errors:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"catefuse: error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    json_errors = "--json-errors" in argv
    try:
        ns = parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(ns, "verbose", None) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return _COMMANDS[ns.subcommand](ns)
    except UsageError as exc:
        _emit_error(exc, json_errors)
        return EXIT_USAGE
    except ConvergenceError as exc:
        _emit_error(exc, json_errors)
        return EXIT_NUMERICAL
    except DataError as exc:
        _emit_error(exc, json_errors)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
