"""Dataset ingestion, splitting, z-scoring and synthetic noise injection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BalanceKind, fib_from_errors
from .errors import MissingColumn, ParseError, TooFewRows
from .grouping import GroupingSpec, grouped_fib_scores

SPLIT_FRACTIONS = (0.56, 0.24, 0.20)
IRIS_FEATURES = ("sepal_length", "sepal_width", "petal_length", "petal_width")
IRIS_TARGET = "species"


@dataclass
class RawData:
    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    target_names: list[str]


def load_csv(path: str | Path, feature_cols: Sequence[str], target_cols: Sequence[str] = ()) -> RawData:
    """Read named columns of a headed CSV into float matrices.

    Every referenced cell must parse as a finite decimal; the first bad cell
    raises ParseError with its 1-based data row and column name.
    """
    feature_cols, target_cols = list(feature_cols), list(target_cols)
    if not feature_cols:
        raise MissingColumn("at least one feature column is required")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0) from None
        index = {name: i for i, name in enumerate(header)}
        missing = [c for c in feature_cols + target_cols if c not in index]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        wanted = feature_cols + target_cols
        rows = []
        for r, line in enumerate(reader, start=1):
            if not line or all(not cell.strip() for cell in line):
                continue
            values = []
            for name in wanted:
                cell = line[index[name]].strip() if index[name] < len(line) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: row {r}, column {name!r}: cannot parse {cell!r}", r, name) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {r}, column {name!r}: non-finite value {cell!r}", r, name)
                values.append(v)
            rows.append(values)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(wanted))
    nf = len(feature_cols)
    return RawData(arr[:, :nf], arr[:, nf:], feature_cols, target_cols)


def iris_path() -> Path:
    return Path(str(resources.files("fibscore") / "data" / "iris.csv"))


def load_iris() -> RawData:
    """Bundled Fisher Iris: 150 x 4 features, class index 0/1/2 as target."""
    return load_csv(iris_path(), IRIS_FEATURES, (IRIS_TARGET,))


@dataclass
class SplitDataset:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_targets: np.ndarray
    val_targets: np.ndarray
    test_targets: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    indices: dict[str, np.ndarray] = field(default_factory=dict)
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    seed: int = 0


def split_sizes(n: int, fractions: tuple[float, float, float] = SPLIT_FRACTIONS) -> tuple[int, int, int]:
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    return n - n_val - n_test, n_val, n_test


def split_and_normalize(raw: RawData, seed: int = 0, normalize: bool = True,
                        fractions: tuple[float, float, float] = SPLIT_FRACTIONS) -> SplitDataset:
    """Shuffle, split train/val/test, then z-score features with train statistics.

    Features constant on the training split get std 1, so they map to 0
    after centering. Targets are left untouched.
    """
    X, Y = raw.features, raw.targets
    n = X.shape[0]
    if n < 10:
        raise TooFewRows(f"need at least 10 rows, got {n}")
    n_train, n_val, _ = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    idx = {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }
    if normalize:
        mean = X[idx["train"]].mean(axis=0)
        std = X[idx["train"]].std(axis=0)
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mean) / std
    return SplitDataset(
        train=Z[idx["train"]], val=Z[idx["val"]], test=Z[idx["test"]],
        train_targets=Y[idx["train"]], val_targets=Y[idx["val"]], test_targets=Y[idx["test"]],
        mean=mean, std=std, indices=idx, fractions=fractions, seed=seed,
    )


@dataclass(frozen=True)
class NoiseExperimentSpec:
    dim: int = 1024
    trials: int = 10000
    fractions: tuple[float, ...] = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
    noise_low: float = 1.0
    noise_high: float = 2.0
    seed: int = 0
    grouping: GroupingSpec | None = None
    kind: BalanceKind = BalanceKind.MSE

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.fractions or any(not 0 < f <= 100 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 100]")
        if self.noise_high <= self.noise_low:
            raise ValueError("noise_high must exceed noise_low")

    def n_perturbed(self, fraction: float) -> int:
        return max(1, math.ceil(fraction * self.dim / 100 - 1e-9))


@dataclass
class NoiseResult:
    fractions: np.ndarray
    trials: np.ndarray
    fib: np.ndarray
    n_perturbed: np.ndarray

    def rows(self):
        return zip(self.fractions, self.trials, self.n_perturbed, self.fib)

    def by_fraction(self) -> dict[float, np.ndarray]:
        return {float(f): self.fib[self.fractions == f] for f in np.unique(self.fractions)}

    def quantiles(self, qs=(0.01, 0.25, 0.5, 0.75, 0.99)) -> dict[str, dict[str, float]]:
        out = {}
        for f, scores in self.by_fraction().items():
            values = np.quantile(scores, qs)
            out[format(f, "g")] = {f"p{round(q * 100)}": float(v) for q, v in zip(qs, values)}
        return out


TRIAL_CHUNK = 2048


def perturbation_pairs(spec: NoiseExperimentSpec, n_perturbed: int, trials: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Base vectors and their perturbed copies, one trial per row."""
    base = rng.standard_normal((trials, spec.dim))
    # a uniformly random n-subset per row: the first n columns of a row-wise permutation
    keys = rng.random((trials, spec.dim))
    chosen = np.argsort(keys, axis=1)[:, :n_perturbed]
    noise = rng.uniform(spec.noise_low, spec.noise_high, size=(trials, n_perturbed))
    perturbed = base.copy()
    np.put_along_axis(perturbed, chosen, np.take_along_axis(base, chosen, axis=1) + noise, axis=1)
    return base, perturbed


def run_noise_experiment(spec: NoiseExperimentSpec) -> NoiseResult:
    """Score base vs. perturbed vectors for every (fraction, trial) pair.

    Each fraction gets its own child seed, so adding or removing a fraction
    leaves the other fractions' draws unchanged.
    """
    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.fractions))
    frac_col, trial_col, fib_col, n_col = [], [], [], []
    for fraction, seed in zip(spec.fractions, seeds):
        n = spec.n_perturbed(fraction)
        rng = np.random.default_rng(seed)
        for start in range(0, spec.trials, TRIAL_CHUNK):
            count = min(TRIAL_CHUNK, spec.trials - start)
            base, perturbed = perturbation_pairs(spec, n, count, rng)
            E = np.abs(perturbed - base)
            scales = np.abs(base).sum(axis=1) + np.abs(perturbed).sum(axis=1)
            if spec.grouping is None:
                scores = fib_from_errors(E, spec.kind, scale=scales)
            else:
                scores = grouped_fib_scores(E, spec.grouping, spec.kind, scales)
            fib_col.append(np.atleast_1d(scores))
        frac_col.append(np.full(spec.trials, float(fraction)))
        trial_col.append(np.arange(spec.trials))
        n_col.append(np.full(spec.trials, n))
    return NoiseResult(
        fractions=np.concatenate(frac_col),
        trials=np.concatenate(trial_col),
        fib=np.concatenate(fib_col),
        n_perturbed=np.concatenate(n_col),
    )
