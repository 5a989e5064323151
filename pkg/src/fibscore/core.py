"""Feature Impact Balance (FIB) score.

The score compares how the absolute error between two vectors is shared
among their features:

    e   = |x - y|                      internal error
    c   = e / sum(e)                   feature impact (uniform if sum(e) == 0)
    fii = mean((c - 1/M)**2)           feature impact imbalance (MSE balance)
    fib = 1 - fii / fii_max            fii_max = (M - 1) / M**2

A score of 1 means every feature carries the same share of the error and a
score of 0 means a single feature carries all of it. The MAE balance
``mean(|c - 1/M|)`` is also supported, normalized by its maximum
``2 (M - 1) / M**2``.

All functions operate on the last axis, so a 2-D array is treated as a
batch of independent rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import (
    DegenerateDimension,
    DimensionMismatch,
    NegativeError,
    NonFiniteInput,
    OutOfBounds,
)
from .serialize import dumps

# relative tolerance under which the total error counts as "no error"
ZERO_ERROR_RTOL = 1e-12
# rounding slack tolerated before clamping normalized imbalance to [0, 1]
CLAMP_SLACK = 1e-9


class BalanceKind(str, Enum):
    MSE = "mse"
    MAE = "mae"

    @classmethod
    def parse(cls, value: "BalanceKind | str") -> "BalanceKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown balance error kind {value!r}; expected 'mse' or 'mae'") from None


class MatrixMode(str, Enum):
    PER_ROW_MEAN = "per-row"
    PER_FEATURE_AGGREGATE = "aggregate"

    @classmethod
    def parse(cls, value: "MatrixMode | str") -> "MatrixMode":
        if isinstance(value, cls):
            return value
        aliases = {
            "per-row": cls.PER_ROW_MEAN,
            "per_row": cls.PER_ROW_MEAN,
            "perrowmean": cls.PER_ROW_MEAN,
            "aggregate": cls.PER_FEATURE_AGGREGATE,
            "perfeatureaggregate": cls.PER_FEATURE_AGGREGATE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown matrix mode {value!r}") from None


@dataclass(frozen=True)
class FibReport:
    """A FIB score together with the intermediate quantities behind it."""

    fib: float
    nfii: float
    fii: float
    impact: np.ndarray
    internal_error: np.ndarray
    k: int
    balance_kind: BalanceKind
    mode: str = "vector"
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "fib": self.fib,
            "nfii": self.nfii,
            "fii": self.fii,
            "k": self.k,
            "balance_kind": self.balance_kind.value,
            "mode": self.mode,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains NaN or infinite entries")
    return arr


def absolute_error(x, y) -> np.ndarray:
    """Element-wise ``|x - y|``; rows of 2-D inputs are handled independently."""
    x = _as_float_array(x, "x")
    y = _as_float_array(y, "y")
    if x.shape != y.shape:
        raise DimensionMismatch(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionMismatch("inputs need at least one feature")
    return np.abs(x - y)


def input_scale(x, y) -> np.ndarray | float:
    """Magnitude ``sum|x| + sum|y|`` used to make the zero-error test relative."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = np.abs(x).sum(axis=-1) + np.abs(y).sum(axis=-1)
    return float(s) if np.ndim(s) == 0 else s


def feature_impact(e, scale=0.0) -> np.ndarray:
    """Share of the total error carried by each entry of ``e``.

    Rows whose total error is at most ``1e-12 * max(1, scale)`` are treated as
    error-free and replaced by the uniform vector, as are rows whose entries
    are all equal (their exact share is ``1/K`` and dividing would only add
    rounding noise).
    """
    e = _as_float_array(e, "error vector")
    if e.ndim == 0 or e.shape[-1] < 1:
        raise DimensionMismatch("error vector must have at least one entry")
    if np.any(e < 0):
        raise NegativeError("error vector entries must be nonnegative")
    k = e.shape[-1]
    # numpy reduces the contiguous axis pairwise, which keeps rounding at O(log K)
    total = e.sum(axis=-1, keepdims=True)
    threshold = ZERO_ERROR_RTOL * np.maximum(1.0, np.asarray(scale, dtype=np.float64))[..., np.newaxis]
    uniform = (total <= threshold) | (e.max(axis=-1, keepdims=True) == e.min(axis=-1, keepdims=True))
    safe_total = np.where(uniform, 1.0, total)
    shares = np.where(uniform, 1.0 / k, e / safe_total)
    return shares


def fii_bound(k: int, kind: BalanceKind | str = BalanceKind.MSE) -> float:
    """Largest imbalance attainable over ``k`` shares (reached at a simplex vertex)."""
    kind = BalanceKind.parse(kind)
    if kind is BalanceKind.MSE:
        return (k - 1) / (k * k)
    return 2.0 * (k - 1) / (k * k)


def feature_impact_imbalance(fi, kind: BalanceKind | str = BalanceKind.MSE):
    """Mean squared (or absolute) deviation of the shares from ``1/K``."""
    kind = BalanceKind.parse(kind)
    fi = _as_float_array(fi, "impact vector")
    k = fi.shape[-1]
    dev = fi - 1.0 / k
    if kind is BalanceKind.MSE:
        fii = np.mean(dev * dev, axis=-1)
    else:
        fii = np.mean(np.abs(dev), axis=-1)
    # a single nonzero share is a simplex vertex: return the bound itself so
    # normalization lands on exactly 1 instead of 1 - ulp
    vertex = np.count_nonzero(fi, axis=-1) == 1
    fii = np.where(vertex, fii_bound(k, kind), fii)
    return float(fii) if fii.ndim == 0 else fii


def normalize_fii(fii, k: int, kind: BalanceKind | str = BalanceKind.MSE):
    """Rescale an imbalance value to [0, 1] by its theoretical maximum."""
    kind = BalanceKind.parse(kind)
    if k < 2:
        raise DegenerateDimension("imbalance is undefined for fewer than two features")
    nfii = np.asarray(fii, dtype=np.float64) / fii_bound(k, kind)
    if np.any(nfii > 1.0 + CLAMP_SLACK) or np.any(nfii < -CLAMP_SLACK):
        raise OutOfBounds(f"normalized imbalance outside [0, 1]: {nfii}")
    nfii = np.clip(nfii, 0.0, 1.0)
    return float(nfii) if nfii.ndim == 0 else nfii


def fib_from_errors(e, kind: BalanceKind | str = BalanceKind.MSE, scale=0.0):
    """FIB of each row of an error array; returns a float or a 1-D array."""
    e = np.asarray(e, dtype=np.float64)
    k = e.shape[-1]
    if k < 2:
        raise DegenerateDimension("FIB needs at least two features or groups")
    fi = feature_impact(e, scale)
    nfii = normalize_fii(feature_impact_imbalance(fi, kind), k, kind)
    return 1.0 - nfii


def report_from_errors(
    e: np.ndarray,
    kind: BalanceKind | str = BalanceKind.MSE,
    scale: float = 0.0,
    mode: str = "vector",
    extra: dict[str, Any] | None = None,
) -> FibReport:
    kind = BalanceKind.parse(kind)
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise DimensionMismatch("expected a single error vector")
    k = e.shape[0]
    if k < 2:
        raise DegenerateDimension("FIB needs at least two features or groups")
    fi = feature_impact(e, scale)
    fii = feature_impact_imbalance(fi, kind)
    nfii = normalize_fii(fii, k, kind)
    return FibReport(
        fib=1.0 - nfii,
        nfii=nfii,
        fii=fii,
        impact=fi,
        internal_error=e,
        k=k,
        balance_kind=kind,
        mode=mode,
        extra=dict(extra or {}),
    )


def fib(x, y, kind: BalanceKind | str = BalanceKind.MSE) -> FibReport:
    """FIB score between two feature vectors of equal length ``M >= 2``."""
    e = absolute_error(x, y)
    if e.ndim != 1:
        raise DimensionMismatch("fib() takes vectors; use fib_matrix() for 2-D input")
    if e.shape[0] < 2:
        raise DegenerateDimension("FIB is undefined for a single feature")
    return report_from_errors(e, kind, scale=input_scale(x, y))


def fib_direct(x, y) -> float:
    """Closed-form MSE score evaluated term by term in plain Python.

    Kept independent of the vectorized pipeline so the two can be checked
    against each other.
    """
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    if len(xs) != len(ys):
        raise DimensionMismatch(f"length mismatch: {len(xs)} vs {len(ys)}")
    if not all(math.isfinite(v) for v in xs + ys):
        raise NonFiniteInput("inputs contain NaN or infinite entries")
    m = len(xs)
    if m < 2:
        raise DegenerateDimension("FIB is undefined for a single feature")
    diffs = [abs(a - b) for a, b in zip(xs, ys)]
    l1 = math.fsum(diffs)
    scale = math.fsum(abs(v) for v in xs) + math.fsum(abs(v) for v in ys)
    if l1 <= ZERO_ERROR_RTOL * max(1.0, scale):
        return 1.0
    total = math.fsum((d / l1 - 1.0 / m) ** 2 for d in diffs)
    return 1.0 - m / (m - 1) * total


def _check_matrices(X, Y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = _as_float_array(X, "X")
    Y = _as_float_array(Y, "Y")
    if X.ndim != 2 or Y.ndim != 2:
        raise DimensionMismatch("fib_matrix expects 2-D arrays (rows = samples)")
    if X.shape != Y.shape:
        raise DimensionMismatch(f"shape mismatch: {X.shape} vs {Y.shape}")
    if X.shape[0] < 1:
        raise DimensionMismatch("need at least one row")
    if X.shape[1] < 2:
        raise DegenerateDimension("FIB is undefined for a single feature")
    return X, Y, np.abs(X - Y)


def summarize_rows(
    E: np.ndarray,
    scales: np.ndarray,
    kind: BalanceKind,
    mode: str,
    extra: dict[str, Any] | None = None,
) -> FibReport:
    """Average per-row pipelines into one report (PerRowMean semantics)."""
    k = E.shape[1]
    fi = feature_impact(E, scales)
    fii = feature_impact_imbalance(fi, kind)
    nfii = normalize_fii(fii, k, kind)
    nfii_mean = float(np.mean(nfii))
    return FibReport(
        fib=1.0 - nfii_mean,
        nfii=nfii_mean,
        fii=float(np.mean(fii)),
        impact=fi.mean(axis=0),
        internal_error=E.mean(axis=0),
        k=k,
        balance_kind=kind,
        mode=mode,
        extra=dict(extra or {}),
    )


def fib_matrix(
    X,
    Y,
    kind: BalanceKind | str = BalanceKind.MSE,
    mode: MatrixMode | str = MatrixMode.PER_FEATURE_AGGREGATE,
) -> FibReport:
    """FIB between two ``N x M`` matrices.

    ``per-row`` averages the score of every row pair. ``aggregate`` first
    averages the absolute error of each feature over the rows and scores
    that single M-vector. The two readings can disagree sharply: two rows
    that each put all their error on a different feature score 0 per row but
    1 in aggregate.
    """
    kind = BalanceKind.parse(kind)
    mode = MatrixMode.parse(mode)
    X, Y, E = _check_matrices(X, Y)
    scales = np.abs(X).sum(axis=1) + np.abs(Y).sum(axis=1)
    if mode is MatrixMode.PER_ROW_MEAN:
        return summarize_rows(E, scales, kind, mode.value)
    return report_from_errors(E.mean(axis=0), kind, scale=float(scales.mean()), mode=mode.value)
