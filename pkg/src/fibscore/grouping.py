"""Feature grouping: score imbalance between groups of features.

On wide inputs the ungrouped score is pushed toward 1 as soon as a modest
fraction of features carries error. Grouping reduces the M per-feature
errors to K group errors first:

1. aggregation decides which features share a group (sorted by error
   magnitude, contiguous in feature order, or an explicit assignment);
2. reduction turns each group into one number (sum or mean).

When M is not a multiple of K the first ``M mod K`` blocks get one extra
feature.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import (
    BalanceKind,
    FibReport,
    MatrixMode,
    absolute_error,
    fib_from_errors,
    input_scale,
    report_from_errors,
    summarize_rows,
    _check_matrices,
)
from .errors import BadAssignment, DimensionMismatch, NegativeError, TooFewFeatures


class Aggregation(str, Enum):
    SORTED_SPLIT = "sorted"
    CONTIGUOUS_SPLIT = "contiguous"
    EXPLICIT = "explicit"


class Reduction(str, Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class GroupingSpec:
    k: int
    aggregation: Aggregation = Aggregation.SORTED_SPLIT
    reduction: Reduction = Reduction.SUM
    assignment: tuple[int, ...] | None = None
    remainder: str = "front-loaded"

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        object.__setattr__(self, "reduction", Reduction(self.reduction))
        if int(self.k) != self.k or self.k < 2:
            raise BadAssignment(f"group count must be an integer >= 2, got {self.k}")
        if self.remainder != "front-loaded":
            raise BadAssignment(f"unsupported remainder policy {self.remainder!r}")
        if self.aggregation is Aggregation.EXPLICIT:
            if self.assignment is None or len(self.assignment) == 0:
                raise BadAssignment("explicit aggregation needs a group index per feature")
            assignment = tuple(int(g) for g in self.assignment)
            if any(g < 0 or g >= self.k for g in assignment):
                raise BadAssignment(f"group indices must lie in [0, {self.k})")
            missing = set(range(self.k)) - set(assignment)
            if missing:
                raise BadAssignment(f"groups {sorted(missing)} have no features")
            object.__setattr__(self, "assignment", assignment)
        elif self.assignment is not None:
            raise BadAssignment("assignment is only meaningful for explicit aggregation")

    @property
    def label(self) -> str:
        return f"g{self.k}" if self.aggregation is Aggregation.SORTED_SPLIT else f"g{self.k}_{self.aggregation.value}"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "k": self.k,
            "aggregation": self.aggregation.value,
            "reduction": self.reduction.value,
        }
        if self.assignment is not None:
            out["assignment"] = list(self.assignment)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GroupingSpec":
        assignment = data.get("assignment")
        return cls(
            k=int(data["k"]),
            aggregation=Aggregation(data.get("aggregation", "sorted")),
            reduction=Reduction(data.get("reduction", "sum")),
            assignment=tuple(assignment) if assignment is not None else None,
        )

    @classmethod
    def from_csv_column(
        cls,
        path: str | Path,
        column: str | None = None,
        reduction: Reduction | str = Reduction.SUM,
    ) -> "GroupingSpec":
        """Explicit assignment read from one CSV column (one row per feature)."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames:
                raise BadAssignment(f"{path}: empty file")
            column = column or reader.fieldnames[0]
            if column not in reader.fieldnames:
                raise BadAssignment(f"{path}: no column {column!r}")
            try:
                groups = [int(row[column]) for row in reader]
            except (TypeError, ValueError) as exc:
                raise BadAssignment(f"{path}: non-integer group index ({exc})") from None
        if not groups:
            raise BadAssignment(f"{path}: no assignments")
        return cls(
            k=max(groups) + 1,
            aggregation=Aggregation.EXPLICIT,
            reduction=Reduction(reduction),
            assignment=tuple(groups),
        )


def block_sizes(m: int, k: int) -> np.ndarray:
    """Sizes of ``k`` contiguous blocks covering ``m`` items, larger blocks first."""
    q, r = divmod(m, k)
    return np.array([q + 1] * r + [q] * (k - r), dtype=np.int64)


def group_errors(e, spec: GroupingSpec) -> np.ndarray:
    """Reduce per-feature errors to per-group errors (last axis, row-wise)."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 0:
        raise DimensionMismatch("error vector must be at least 1-D")
    if np.any(e < 0):
        raise NegativeError("error vector entries must be nonnegative")
    m = e.shape[-1]
    if m < spec.k:
        raise TooFewFeatures(f"cannot split {m} features into {spec.k} groups")

    if spec.aggregation is Aggregation.EXPLICIT:
        assignment = np.asarray(spec.assignment)
        if assignment.shape[0] != m:
            raise BadAssignment(f"assignment covers {assignment.shape[0]} features, input has {m}")
        membership = np.zeros((m, spec.k))
        membership[np.arange(m), assignment] = 1.0
        grouped = e @ membership
        sizes = membership.sum(axis=0)
    else:
        if spec.aggregation is Aggregation.SORTED_SPLIT:
            # stable descending sort: equal errors keep their feature order
            order = np.argsort(-e, axis=-1, kind="stable")
            e = np.take_along_axis(e, order, axis=-1)
        sizes = block_sizes(m, spec.k)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        grouped = np.add.reduceat(e, starts, axis=-1)

    if spec.reduction is Reduction.MEAN:
        grouped = grouped / sizes
    return grouped


def grouped_fib(x, y, spec: GroupingSpec, kind: BalanceKind | str = BalanceKind.MSE) -> FibReport:
    e = absolute_error(x, y)
    if e.ndim != 1:
        raise DimensionMismatch("grouped_fib() takes vectors; use grouped_fib_matrix() for 2-D input")
    g = group_errors(e, spec)
    return report_from_errors(
        g, kind, scale=input_scale(x, y), mode="grouped", extra={"grouping": spec.label}
    )


def grouped_fib_scores(E, spec: GroupingSpec, kind: BalanceKind | str = BalanceKind.MSE, scales=0.0):
    """Grouped score of every row of an error matrix."""
    return fib_from_errors(group_errors(E, spec), kind, scale=scales)


def grouped_fib_matrix(
    X,
    Y,
    spec: GroupingSpec,
    kind: BalanceKind | str = BalanceKind.MSE,
    mode: MatrixMode | str = MatrixMode.PER_FEATURE_AGGREGATE,
) -> FibReport:
    """Grouped score over matrices.

    ``per-row`` sorts and groups each row separately; ``aggregate`` averages
    the per-feature errors over rows first and groups that vector once.
    """
    kind = BalanceKind.parse(kind)
    mode = MatrixMode.parse(mode)
    X, Y, E = _check_matrices(X, Y)
    scales = np.abs(X).sum(axis=1) + np.abs(Y).sum(axis=1)
    extra = {"grouping": spec.label}
    if mode is MatrixMode.PER_ROW_MEAN:
        return summarize_rows(group_errors(E, spec), scales, kind, mode.value, extra)
    g = group_errors(E.mean(axis=0), spec)
    return report_from_errors(g, kind, scale=float(scales.mean()), mode=mode.value, extra=extra)


def parse_group_list(text: str | Sequence[int]) -> list[GroupingSpec]:
    """``"2,3,10"`` -> sorted-split/sum specs for each group count."""
    if isinstance(text, str):
        items = [t for t in text.replace(" ", "").split(",") if t]
    else:
        items = list(text)
    return [GroupingSpec(k=int(t)) for t in items]
