"""Feature Impact Balance score and the experiments built around it."""

from .core import (
    BalanceKind,
    FibReport,
    MatrixMode,
    absolute_error,
    feature_impact,
    feature_impact_imbalance,
    fib,
    fib_direct,
    fib_from_errors,
    fib_matrix,
    normalize_fii,
)
from .grouping import Aggregation, GroupingSpec, Reduction, group_errors, grouped_fib, grouped_fib_matrix

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "BalanceKind",
    "FibReport",
    "GroupingSpec",
    "MatrixMode",
    "Reduction",
    "absolute_error",
    "feature_impact",
    "feature_impact_imbalance",
    "fib",
    "fib_direct",
    "fib_from_errors",
    "fib_matrix",
    "group_errors",
    "grouped_fib",
    "grouped_fib_matrix",
    "normalize_fii",
]
