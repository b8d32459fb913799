"""Input validation helpers used by the estimators and solvers."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, PositivityError


def as_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array with at least one row and column."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"{name} must be a 2-D matrix, got ndim={X.ndim}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"{name} must have at least one row and one column, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError(f"{name} contains non-finite values")
    return X


def as_vector(v, n: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if n is not None and v.shape[0] != n:
        raise DataError(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise DataError(f"{name} contains non-finite values")
    return v


def as_treatment(a, n: int | None = None) -> np.ndarray:
    """Coerce a treatment vector to int8 values in {-1, +1}."""
    a = np.asarray(a).ravel()
    if n is not None and a.shape[0] != n:
        raise DataError(f"treatment vector has length {a.shape[0]}, expected {n}")
    out = np.empty(a.shape[0], dtype=np.int8)
    ok = np.isin(a, (-1, 1))
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise DataError(f"treatment values must be -1 or +1; row {bad} has {a[bad]!r}")
    out[:] = a
    return out


def check_weights(w, n: int) -> np.ndarray:
    w = as_vector(w, n, name="weights")
    if np.any(w < 0):
        raise DataError("weights must be nonnegative")
    if w.sum() <= 0:
        raise DataError("weights must have positive sum")
    return w


def check_propensity(pi: float) -> float:
    pi = float(pi)
    if not (0.0 < pi < 1.0):
        raise PositivityError(f"treatment probability must lie in (0, 1), got {pi}")
    return pi
