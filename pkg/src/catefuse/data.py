"""Canonical dataset representation with CSV ingestion and emission.

The on-disk schema is a header row ``study,y,a,x1,...,xp`` followed by one
row per observation, all numerics as decimal text. Treatment is coded
{-1, +1} internally; {0, 1} is accepted on ingestion (0 maps to -1, and
the recoding is recorded in the dataset's ``meta``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_treatment, as_vector
from .exceptions import DataError

STUDY_TAGS = ("r", "o")
_A_VALUES = (-1.0, 0.0, 1.0)


@dataclass
class StudyDataset:
    """One study's observations: covariates, treatment in {-1, +1}, outcome.

    ``feature_names`` labels the columns of ``X``; two datasets entering the
    same analysis must agree on it exactly.
    """

    study: str
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    feature_names: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDY_TAGS:
            raise DataError(f"study tag must be one of {STUDY_TAGS}, got {self.study!r}")
        self.X = as_matrix(self.X, "X")
        n = self.X.shape[0]
        self.A = as_treatment(self.A, n)
        self.Y = as_vector(self.Y, n, "Y")
        self.feature_names = list(self.feature_names)
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError(
                f"{len(self.feature_names)} feature names for {self.X.shape[1]} columns"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def arm_rows(self, arm: int) -> np.ndarray:
        return np.flatnonzero(self.A == arm)

    def subset(self, rows) -> "StudyDataset":
        rows = np.asarray(rows)
        return StudyDataset(self.study, self.X[rows], self.A[rows], self.Y[rows],
                            self.feature_names, dict(self.meta))


def require_aligned_features(a: StudyDataset, b: StudyDataset) -> None:
    if a.feature_names != b.feature_names:
        raise DataError("datasets do not share identical feature names in identical order")


@dataclass
class PropensitySpec:
    """Treatment assignment probability: a constant or a logistic model."""

    kind: str
    pi_plus1: float | None = None
    coef: np.ndarray | None = None
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.pi_plus1 is None or not (0.0 < self.pi_plus1 < 1.0):
                raise DataError("constant propensity must lie strictly inside (0, 1)")
        elif self.kind == "logistic":
            if self.coef is None:
                raise DataError("logistic propensity requires a coefficient vector")
            self.coef = as_vector(self.coef, name="propensity coef")
            self.intercept = float(self.intercept)
        else:
            raise DataError(f"unknown propensity kind {self.kind!r}")

    def prob_plus1(self, X) -> np.ndarray:
        """P(A = +1 | X) row-wise, always inside (0, 1) for finite input."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "constant":
            return np.full(X.shape[0], self.pi_plus1)
        from scipy.special import expit

        return expit(X @ self.coef + self.intercept)


def _parse_float(token: str, line: int, column: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataError(
            f"non-numeric value {token!r} at line {line}, column {column!r}"
        ) from None


def read_csv(path) -> StudyDataset:
    """Load a dataset written by :func:`write_csv` (or matching its schema).

    Rejects missing or extra columns, non-numeric cells, and treatment
    values outside {-1, 1} / {0, 1}, naming the offending line and column.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")

    header = rows[0]
    if len(header) < 4 or header[:3] != ["study", "y", "a"]:
        raise DataError(f"{path}: header must start with study,y,a,x1,...; got {header[:4]}")
    feature_names = header[3:]
    expected = [f"x{j + 1}" for j in range(len(feature_names))]
    if feature_names != expected:
        raise DataError(f"{path}: covariate columns must be x1..x{len(feature_names)}")
    if len(rows) == 1:
        raise DataError(f"{path}: no data rows")

    n, p = len(rows) - 1, len(feature_names)
    X = np.empty((n, p))
    a_raw = np.empty(n)
    Y = np.empty(n)
    study = None
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != 3 + p:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {3 + p}")
        tag = row[0]
        if tag not in STUDY_TAGS:
            raise DataError(f"{path}: line {line}: study tag must be 'r' or 'o', got {tag!r}")
        if study is None:
            study = tag
        elif tag != study:
            raise DataError(f"{path}: line {line}: mixed study tags {study!r} and {tag!r}")
        Y[i] = _parse_float(row[1], line, "y")
        a = _parse_float(row[2], line, "a")
        if a not in _A_VALUES:
            raise DataError(
                f"{path}: line {line}: treatment must be -1/1 or 0/1, got {row[2]!r}"
            )
        a_raw[i] = a
        for j in range(p):
            X[i, j] = _parse_float(row[3 + j], line, feature_names[j])

    meta = {}
    if np.any(a_raw == 0):
        if np.any(a_raw == -1):
            bad = int(np.flatnonzero(a_raw == -1)[0]) + 2
            raise DataError(
                f"{path}: line {bad}: treatment mixes 0/1 and -1/1 codings"
            )
        a_raw = np.where(a_raw == 0, -1.0, 1.0)
        meta["treatment_recoded"] = "0/1 mapped to -1/+1"
    return StudyDataset(study, X, a_raw.astype(np.int8), Y, feature_names, meta)


def write_csv(ds: StudyDataset, path) -> None:
    """Emit the dataset with round-trip-safe decimal formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["study", "y", "a"] + list(ds.feature_names))
        for i in range(ds.n):
            writer.writerow(
                [ds.study, repr(float(ds.Y[i])), str(int(ds.A[i]))]
                + [repr(float(v)) for v in ds.X[i]]
            )


def stratified_folds(a: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Partition row indices into ``k`` folds stratified by treatment arm.

    Fold sizes differ by at most one, and each arm's per-fold counts differ
    by at most one. Deterministic given ``seed``.
    """
    a = as_treatment(a)
    n = a.shape[0]
    if k < 2:
        raise DataError("need at least 2 folds")
    if k > n:
        raise DataError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    start = 0
    for arm in (1, -1):
        idx = np.flatnonzero(a == arm)
        if idx.size < k:
            raise DataError(
                f"arm {arm:+d} has {idx.size} rows, too small to stratify into {k} folds"
            )
        idx = rng.permutation(idx)
        for i, row in enumerate(idx):
            folds[(start + i) % k].append(int(row))
        start += idx.size
    return [np.sort(np.array(f, dtype=np.intp)) for f in folds]


def split_folds(ds: StudyDataset, k: int, seed: int) -> list[np.ndarray]:
    """Disjoint, exhaustive, arm-stratified folds of a dataset's rows."""
    return stratified_folds(ds.A, k, seed)
