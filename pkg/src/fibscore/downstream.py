"""Linear probes on frozen encoder representations, and ranking models by them."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DegenerateLabels, FibError, SingularSystem
from .neural import Model, TrainRun, encode
from .serialize import write_csv

RIDGE_JITTER = 1e-8


def _augment(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([X, np.ones((X.shape[0], 1))])


def fit_linear_regression(X, y, jitter: float = RIDGE_JITTER) -> np.ndarray:
    """Least squares via the normal equations; returns ``[coefs..., intercept]``."""
    A = _augment(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if A.shape[0] != y.shape[0]:
        raise SingularSystem(f"{A.shape[0]} rows but {y.shape[0]} targets")
    gram = A.T @ A + jitter * np.eye(A.shape[1])
    try:
        w = np.linalg.solve(gram, A.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"normal equations are singular: {exc}") from None
    if not np.all(np.isfinite(w)):
        raise SingularSystem("normal equations produced non-finite weights")
    return w


def predict_linear(w, X) -> np.ndarray:
    return _augment(X) @ w


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce(w, A, t) -> float:
    z = A @ w
    # log(1 + exp(z)) - t z, stable for both signs of z
    return float(np.mean(np.logaddexp(0.0, z) - t * z))


def fit_logistic_ovr(X, labels, class_id, tol: float = 1e-6, max_iter: int = 5000) -> np.ndarray:
    """Binary cross-entropy for ``labels == class_id`` by gradient descent.

    Steps are chosen by Armijo backtracking, starting each iteration from
    twice the previous accepted step. Stops once the gradient max-norm drops
    below ``tol`` or after ``max_iter`` iterations (separable data never
    reaches the tolerance). Returns ``[coefs..., intercept]``.
    """
    A = _augment(X)
    t = (np.asarray(labels).ravel() == class_id).astype(np.float64)
    if t.shape[0] != A.shape[0]:
        raise DegenerateLabels(f"{A.shape[0]} rows but {t.shape[0]} labels")
    if t.min() == t.max():
        raise DegenerateLabels(f"class {class_id!r} is {'everything' if t[0] else 'absent'}")
    w = np.zeros(A.shape[1])
    n = A.shape[0]
    step = 1.0
    loss = _bce(w, A, t)
    for _ in range(max_iter):
        g = A.T @ (_sigmoid(A @ w) - t) / n
        if np.max(np.abs(g)) < tol:
            break
        gg = float(g @ g)
        step *= 2.0
        while True:
            candidate = w - step * g
            new_loss = _bce(candidate, A, t)
            if new_loss <= loss - 0.5 * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                return w
        w, loss = candidate, new_loss
    return w


def predict_proba(w, X) -> np.ndarray:
    return _sigmoid(_augment(X) @ w)


class ProbeKind(str, Enum):
    LOGISTIC = "logistic"
    LINEAR = "linear"


@dataclass(frozen=True)
class ProbeTask:
    kind: ProbeKind
    target: int  # class id for logistic probes, target column for linear ones

    @property
    def metric(self) -> str:
        return "accuracy" if self.kind is ProbeKind.LOGISTIC else "mse"

    @property
    def higher_is_better(self) -> bool:
        return self.kind is ProbeKind.LOGISTIC

    @property
    def name(self) -> str:
        return f"{'class' if self.kind is ProbeKind.LOGISTIC else 'output'}{self.target}"


def auto_tasks(targets: np.ndarray, max_classes: int = 20) -> list[ProbeTask]:
    """One-vs-rest probes for a single integer label column, else one regression per column."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[1] == 1:
        col = targets[:, 0]
        classes = np.unique(col)
        if np.all(classes == np.round(classes)) and 2 <= len(classes) <= max_classes:
            return [ProbeTask(ProbeKind.LOGISTIC, int(c)) for c in classes]
    return [ProbeTask(ProbeKind.LINEAR, j) for j in range(targets.shape[1])]


def evaluate_probe(task: ProbeTask, Z_train, y_train, Z_test, y_test) -> float:
    y_train = np.asarray(y_train, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.float64)
    if y_train.ndim == 1:
        y_train, y_test = y_train[:, None], y_test[:, None]
    if task.kind is ProbeKind.LOGISTIC:
        w = fit_logistic_ovr(Z_train, y_train[:, 0], task.target)
        pred = predict_proba(w, Z_test) >= 0.5
        return float(np.mean(pred == (y_test[:, 0] == task.target)))
    w = fit_linear_regression(Z_train, y_train[:, task.target])
    resid = predict_linear(w, Z_test) - y_test[:, task.target]
    return float(np.mean(resid * resid))


@dataclass
class ModelSnapshot:
    """What the study needs from a trained model: its id, encoder and score."""

    seed: int
    model: Model
    fib: float

    @classmethod
    def from_run(cls, run: TrainRun) -> "ModelSnapshot":
        return cls(run.config.seed, run.best_model(), run.best.val_fib)


@dataclass
class ModelSelection:
    seed: int
    fib: float
    metrics: dict[str, float] = field(default_factory=dict)
    ranks: dict[str, int] = field(default_factory=dict)
    valid: dict[str, bool] = field(default_factory=dict)
    top3_count: int = 0


@dataclass
class SelectionReport:
    tasks: list[ProbeTask]
    models: list[ModelSelection]
    top_n: int = 3

    def header(self) -> list[str]:
        names = [t.name for t in self.tasks]
        return ["seed", "fib", *(f"{n}_{t.metric}" for n, t in zip(names, self.tasks)),
                *(f"{n}_rank" for n in names), "top3_count"]

    def rows(self):
        for m in self.models:
            yield [m.seed, m.fib, *(m.metrics[t.name] for t in self.tasks),
                   *(m.ranks[t.name] for t in self.tasks), m.top3_count]

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.header(), self.rows())

    def mean_fib_by_top3(self) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for m in self.models:
            out.setdefault(m.top3_count, []).append(m.fib)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def summary(self) -> dict[str, Any]:
        counts: dict[int, int] = {}
        for m in self.models:
            counts[m.top3_count] = counts.get(m.top3_count, 0) + 1
        return {
            "n_models": len(self.models),
            "tasks": [{"name": t.name, "kind": t.kind.value, "metric": t.metric} for t in self.tasks],
            "top_n": self.top_n,
            "models_per_top3_count": {str(k): v for k, v in sorted(counts.items())},
            "mean_fib_per_top3_count": {str(k): v for k, v in self.mean_fib_by_top3().items()},
            "invalid_cells": sum(not ok for m in self.models for ok in m.valid.values()),
        }


def rank_models(models: list[ModelSelection], task: ProbeTask) -> None:
    """Assign 1-based ranks for ``task``; invalid cells go last, ties break by seed."""
    def key(m: ModelSelection):
        value = m.metrics[task.name]
        if not m.valid[task.name]:
            return (1, 0.0, m.seed)
        return (0, -value if task.higher_is_better else value, m.seed)

    for rank, m in enumerate(sorted(models, key=key), start=1):
        m.ranks[task.name] = rank


def selection_study(runs: Sequence[TrainRun | ModelSnapshot], data, tasks: Sequence[ProbeTask] | None = None,
                    top_n: int = 3) -> SelectionReport:
    """Fit every probe on each model's train representation and rank on test."""
    snapshots = [r if isinstance(r, ModelSnapshot) else ModelSnapshot.from_run(r) for r in runs]
    tasks = list(tasks) if tasks is not None else auto_tasks(data.train_targets)
    models = []
    for snap in snapshots:
        Z_train = encode(snap.model, data.train)
        Z_test = encode(snap.model, data.test)
        entry = ModelSelection(snap.seed, snap.fib)
        for task in tasks:
            try:
                value = evaluate_probe(task, Z_train, data.train_targets, Z_test, data.test_targets)
                ok = bool(np.isfinite(value))
            except (FibError, np.linalg.LinAlgError):
                value, ok = float("nan"), False
            entry.metrics[task.name] = value
            entry.valid[task.name] = ok
        models.append(entry)
    for task in tasks:
        rank_models(models, task)
    for m in models:
        m.top3_count = sum(m.ranks[t.name] <= top_n for t in tasks)
    return SelectionReport(tasks, models, top_n)
