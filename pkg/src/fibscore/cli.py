"""``fibscore`` command line: score, noise, verify-simplex, train, select.

Every command that writes to an output directory also writes a
``manifest.json`` holding the command, its flags, the seed and the package
version. Re-running with the same flags reproduces the CSV outputs byte
for byte.

Exit status: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import BalanceKind, MatrixMode, fib, fib_matrix
from .datalab import (
    IRIS_FEATURES,
    IRIS_TARGET,
    NoiseExperimentSpec,
    iris_path,
    load_csv,
    run_noise_experiment,
    split_and_normalize,
)
from .downstream import ModelSnapshot, auto_tasks, selection_study
from .errors import FibError, VerificationFailure
from .grouping import GroupingSpec, grouped_fib, grouped_fib_matrix, parse_group_list
from .neural import LayerSpec, ModelKind, TrainConfig, init_model, load_params, save_params, train
from .serialize import dumps, write_csv, write_json
from .simplex import convexity_gap, verify_range

OUT_ENV = "FIBSCORE_OUT"
IRIS_BUNDLED = "iris-bundled"


class UsageError(Exception):
    pass


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(os.environ.get(OUT_ENV, "fibscore-out")) / args.command
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args: argparse.Namespace, seed: int | None, extra: dict | None = None) -> None:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func",)}
    manifest = {"command": args.command, "flags": flags, "seed": seed, "version": __version__}
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fraction_list(text: str) -> list[float]:
    """``"10,20,50"`` or a range ``"10..100"`` (step 10) or ``"5..50:5"``."""
    try:
        if ".." in text:
            lo, rest = text.split("..")
            hi, _, step = rest.partition(":")
            lo_f, hi_f, step_f = float(lo), float(hi), float(step or 10)
            n = int(round((hi_f - lo_f) / step_f))
            return [lo_f + i * step_f for i in range(n + 1)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None


def read_matrix(path: str | Path) -> np.ndarray:
    """Numeric CSV to a 2-D array; a non-numeric first row is taken as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: no data")

    def parse(row, lineno):
        try:
            return [float(c) for c in row]
        except ValueError:
            raise UsageError(f"{path}: line {lineno}: non-numeric cell") from None

    try:
        first = [float(c) for c in rows[0]]
        body = [first] + [parse(r, i) for i, r in enumerate(rows[1:], start=2)]
    except ValueError:
        body = [parse(r, i) for i, r in enumerate(rows[1:], start=2)]
    if not body:
        raise UsageError(f"{path}: header only")
    if len({len(r) for r in body}) != 1:
        raise UsageError(f"{path}: ragged rows")
    arr = np.array(body, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{path}: non-finite values")
    return arr


# -- score -------------------------------------------------------------------

def cmd_score(args: argparse.Namespace) -> int:
    if args.pairs:
        if args.x or args.y:
            raise UsageError("use either --pairs or --x/--y")
        P = read_matrix(args.pairs)
        if P.shape[1] % 2:
            raise UsageError("--pairs needs an even number of columns (x then y)")
        X, Y = P[:, : P.shape[1] // 2], P[:, P.shape[1] // 2:]
    else:
        if not (args.x and args.y):
            raise UsageError("need --x and --y, or --pairs")
        X, Y = read_matrix(args.x), read_matrix(args.y)
    if X.shape != Y.shape:
        raise UsageError(f"shape mismatch: {X.shape} vs {Y.shape}")

    spec = GroupingSpec(k=args.groups) if args.groups else None
    kind = BalanceKind.parse(args.balance)
    lines = []
    if args.mode == "aggregate":
        report = (grouped_fib_matrix(X, Y, spec, kind, MatrixMode.PER_FEATURE_AGGREGATE) if spec
                  else fib_matrix(X, Y, kind, MatrixMode.PER_FEATURE_AGGREGATE))
        lines.append(report.to_json())
    else:
        for i in range(X.shape[0]):
            report = grouped_fib(X[i], Y[i], spec, kind) if spec else fib(X[i], Y[i], kind)
            d = report.to_dict()
            d["row"] = i
            lines.append(dumps(d))
    for line in lines:
        print(line)
    if args.out:
        out = _out_dir(args)
        (out / "scores.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        _write_manifest(out, args, None)
    return 0


# -- noise -------------------------------------------------------------------

def cmd_noise(args: argparse.Namespace) -> int:
    spec = NoiseExperimentSpec(
        dim=args.dim,
        trials=args.trials,
        fractions=tuple(args.fractions),
        noise_low=args.noise_low,
        noise_high=args.noise_high,
        seed=args.seed,
        grouping=GroupingSpec(k=args.groups) if args.groups else None,
        kind=BalanceKind.parse(args.balance),
    )
    result = run_noise_experiment(spec)
    out = _out_dir(args)
    write_csv(out / "results.csv", ["fraction", "trial", "n_perturbed", "fib"], result.rows())
    write_json(out / "quantiles.json", {
        "dim": spec.dim,
        "trials": spec.trials,
        "groups": args.groups,
        "quantiles": result.quantiles(),
    })
    _write_manifest(out, args, args.seed)
    print(f"wrote {len(result.fib)} rows to {out / 'results.csv'}")
    return 0


# -- verify-simplex ----------------------------------------------------------

def cmd_verify_simplex(args: argparse.Namespace) -> int:
    status = 0
    try:
        reports = [r.to_dict() for r in verify_range(args.m_max, args.samples, args.seed)]
        error = None
    except VerificationFailure as exc:
        reports, status = [], 1
        error = {"message": str(exc), "point": None if exc.point is None else np.asarray(exc.point).tolist()}
    gaps = {str(m): convexity_gap(m, args.samples, args.seed + m) for m in range(2, args.m_max + 1)}
    if any(g > 1e-12 for g in gaps.values()):
        status = 1
    doc = {"ok": status == 0, "reports": reports, "convexity_max_gap": gaps, "error": error}
    print(dumps(doc, indent=2))
    if args.out:
        out = _out_dir(args)
        write_json(out / "verify_simplex.json", doc)
        _write_manifest(out, args, args.seed)
    return status


# -- train -------------------------------------------------------------------

def _dataset_from_flags(dataset: str, feature_cols, target_cols):
    if dataset == IRIS_BUNDLED:
        return load_csv(iris_path(), feature_cols or IRIS_FEATURES,
                        target_cols if target_cols is not None else (IRIS_TARGET,))
    if not feature_cols:
        raise UsageError("--feature-cols is required for a CSV dataset")
    return load_csv(dataset, feature_cols, target_cols or ())


def _split_cols(text: str | None):
    return None if text is None else [c.strip() for c in text.split(",") if c.strip()]


def cmd_train(args: argparse.Namespace) -> int:
    feature_cols, target_cols = _split_cols(args.feature_cols), _split_cols(args.target_cols)
    raw = _dataset_from_flags(args.dataset, feature_cols, target_cols)
    data = split_and_normalize(raw, seed=args.split_seed, normalize=not args.no_normalize)
    kind = ModelKind(args.kind)
    lr = args.lr if args.lr is not None else (1e-3 if kind is ModelKind.AE else 1e-4)
    if args.batch_size == "full" or (args.batch_size is None and args.dataset == IRIS_BUNDLED):
        batch_size = None
    else:
        batch_size = int(args.batch_size or 32)
    spec = LayerSpec(tuple(args.layers), raw.features.shape[1], args.activation,
                     output_activation=args.output_activation)
    fib_specs = parse_group_list(args.fib_groups or "")

    out = _out_dir(args)
    per_seed = []
    for seed in range(args.seed_offset, args.seed_offset + args.seeds):
        cfg = TrainConfig(learning_rate=lr, epochs=args.epochs, batch_size=batch_size, seed=seed,
                          kl_weight=args.kl_weight)
        run = train(init_model(spec, kind, seed), data, cfg, fib_specs)
        run.to_csv(out / f"run_seed{seed}.csv")
        save_params(out / f"params_seed{seed}.bin", run.best_model(),
                    {**run.metadata(), "seed": seed, "best_val_fib": run.best.val_fib})
        per_seed.append({
            "seed": seed,
            "best_epoch": run.best_epoch,
            "best_val_fib": run.best.val_fib,
            "final_val_fib": run.final.val_fib,
            "final_val_mse": run.final.val_mse,
            "final_val_kl": run.final.val_kl,
            **{f"final_val_fib_{g}": run.final.val_grouped_fib[g] for g in run.group_labels},
        })

    def stats(key):
        vals = np.array([p[key] for p in per_seed])
        return {"mean": float(vals.mean()), "std": float(vals.std())}

    keys = ["final_val_fib", "final_val_mse", "final_val_kl", "best_val_fib",
            *(k for k in per_seed[0] if k.startswith("final_val_fib_"))]
    summary = {"kind": kind.value, "layers": list(spec.sizes), "learning_rate": lr,
               "epochs": args.epochs, "seeds": per_seed, "aggregate": {k: stats(k) for k in keys}}
    write_json(out / "summary.json", summary)
    dataset_info = {"dataset": {
        "source": args.dataset,
        "feature_cols": raw.feature_names,
        "target_cols": raw.target_names,
        "split_seed": args.split_seed,
        "normalize": not args.no_normalize,
    }}
    _write_manifest(out, args, args.seed_offset, dataset_info)
    agg = summary["aggregate"]
    print(f"{args.seeds} seed(s): final val FIB {agg['final_val_fib']['mean']:.4f} "
          f"+/- {agg['final_val_fib']['std']:.4f}, val MSE {agg['final_val_mse']['mean']:.4f}")
    return 0


# -- select ------------------------------------------------------------------

def cmd_select(args: argparse.Namespace) -> int:
    runs_dir = Path(args.runs)
    manifest_path = runs_dir / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"{runs_dir}: no manifest.json (not a train output directory?)")
    info = json.loads(manifest_path.read_text(encoding="utf-8")).get("dataset", {})
    source = args.dataset or info.get("source")
    if source is None:
        raise UsageError("dataset unknown; pass --dataset")
    raw = _dataset_from_flags(source, info.get("feature_cols"), info.get("target_cols"))
    if raw.targets.shape[1] == 0:
        raise UsageError("dataset has no target columns to probe")
    data = split_and_normalize(raw, seed=info.get("split_seed", 0), normalize=info.get("normalize", True))

    snapshots = []
    for path in sorted(runs_dir.glob("params_seed*.bin"), key=lambda p: int(p.stem.removeprefix("params_seed"))):
        model, meta = load_params(path)
        snapshots.append(ModelSnapshot(int(meta["seed"]), model, float(meta["best_val_fib"])))
    if not snapshots:
        raise UsageError(f"{runs_dir}: no parameter snapshots")
    if args.tasks != "auto":
        raise UsageError("only --tasks auto is supported")
    report = selection_study(snapshots, data, auto_tasks(data.train_targets), top_n=args.top)

    out = _out_dir(args)
    report.to_csv(out / "selection.csv")
    write_json(out / "selection.json", report.summary())
    _write_manifest(out, args, None)
    print(dumps(report.summary()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="FIB between rows of two CSV matrices")
    p.add_argument("--x", type=Path)
    p.add_argument("--y", type=Path)
    p.add_argument("--pairs", type=Path, help="single CSV, first half of columns = x, second half = y")
    p.add_argument("--groups", type=int, help="score K sorted-split groups instead of features")
    p.add_argument("--balance", choices=["mse", "mae"], default="mse")
    p.add_argument("--mode", choices=["per-row", "aggregate"], default="per-row")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("noise", help="uniform noise injection experiment")
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--fractions", type=_fraction_list, default=_fraction_list("10..100"))
    p.add_argument("--groups", type=int)
    p.add_argument("--noise-low", type=float, default=1.0)
    p.add_argument("--noise-high", type=float, default=2.0)
    p.add_argument("--balance", choices=["mse", "mae"], default="mse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("verify-simplex", help="check imbalance maxima on the simplex")
    p.add_argument("--m-max", type=int, default=16)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_verify_simplex)

    p = sub.add_parser("train", help="train AE/VAE seeds and track FIB per epoch")
    p.add_argument("--dataset", default=IRIS_BUNDLED, help=f"CSV path or {IRIS_BUNDLED!r}")
    p.add_argument("--feature-cols")
    p.add_argument("--target-cols")
    p.add_argument("--no-normalize", action="store_true", help="skip z-scoring (e.g. [0,1] pixels)")
    p.add_argument("--layers", type=_int_list, default=[4, 2])
    p.add_argument("--kind", choices=["ae", "vae"], default="ae")
    p.add_argument("--activation", choices=["relu", "tanh", "identity", "sigmoid"], default="relu")
    p.add_argument("--output-activation", choices=["identity", "sigmoid"], default="identity")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", help="integer or 'full'")
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed-offset", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fib-groups", help="comma-separated group counts, e.g. 2,3,5")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="rank trained models by linear-probe performance")
    p.add_argument("--runs", type=Path, required=True)
    p.add_argument("--dataset")
    p.add_argument("--tasks", default="auto")
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_select)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FibError, OSError, ValueError) as exc:
        print(f"fibscore {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
