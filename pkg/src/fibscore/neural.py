"""Fully connected AutoEncoder / Variational AutoEncoder in plain numpy.

Parameters of a model live in one flat float64 buffer; each layer's weight
and bias are views into it. That keeps Adam, snapshots and finite
difference checks trivial: they all work on a single vector.

Layer layout for ``LayerSpec(sizes=(4, 2), input_dim=4)``::

    encoder  4 -> 4 (hidden act) -> 2 (latent)
    decoder  2 -> 4 (hidden act) -> 4 (output act)

A VAE doubles the width of the last encoder layer; its output is split
into the latent mean and log-variance.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import MatrixMode, fib_matrix
from .errors import BadSpec, DimensionMismatch, DivergenceDetected
from .grouping import GroupingSpec, grouped_fib_matrix
from .serialize import write_csv

ACTIVATIONS = ("relu", "tanh", "identity", "sigmoid")
INIT_SCHEME = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases"
SNAPSHOT_MAGIC = b"FIBP"


class ModelKind(str, Enum):
    AE = "ae"
    VAE = "vae"


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass(frozen=True)
class LayerSpec:
    """Encoder widths (last = latent size); the decoder mirrors them."""

    sizes: tuple[int, ...]
    input_dim: int
    activation: str | tuple[str, ...] = "relu"
    output_activation: str = "identity"
    latent_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise BadSpec("sizes must be nonempty")
        if any(s < 1 for s in sizes) or self.input_dim < 1:
            raise BadSpec("layer widths must be positive")
        object.__setattr__(self, "sizes", sizes)
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * (len(sizes) - 1)
        acts = tuple(a.lower() for a in acts)
        if len(acts) != len(sizes) - 1:
            raise BadSpec(f"need {len(sizes) - 1} hidden activations, got {len(acts)}")
        for a in acts + (self.output_activation, self.latent_activation):
            if a not in ACTIVATIONS:
                raise BadSpec(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)

    @property
    def latent_dim(self) -> int:
        return self.sizes[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sizes": list(self.sizes),
            "input_dim": self.input_dim,
            "activation": list(self.activation),
            "output_activation": self.output_activation,
            "latent_activation": self.latent_activation,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LayerSpec":
        return cls(
            sizes=tuple(data["sizes"]),
            input_dim=int(data["input_dim"]),
            activation=tuple(data["activation"]),
            output_activation=data["output_activation"],
            latent_activation=data["latent_activation"],
        )


@dataclass(frozen=True)
class _Layer:
    fan_in: int
    fan_out: int
    activation: str
    offset: int

    @property
    def size(self) -> int:
        return self.fan_in * self.fan_out + self.fan_out


class Model:
    def __init__(self, spec: LayerSpec, kind: ModelKind | str = ModelKind.AE, params: np.ndarray | None = None):
        self.spec = spec
        self.kind = ModelKind(kind)
        d, sizes = spec.input_dim, spec.sizes
        enc_dims = [d, *sizes]
        if self.kind is ModelKind.VAE:
            enc_dims[-1] = 2 * sizes[-1]
        dec_dims = [sizes[-1], *reversed(sizes[:-1]), d]
        enc_acts = [*spec.activation, "identity" if self.kind is ModelKind.VAE else spec.latent_activation]
        dec_acts = [*reversed(spec.activation), spec.output_activation]

        self.layers: list[_Layer] = []
        offset = 0
        for dims, acts in ((enc_dims, enc_acts), (dec_dims, dec_acts)):
            for fan_in, fan_out, act in zip(dims[:-1], dims[1:], acts):
                layer = _Layer(fan_in, fan_out, act, offset)
                self.layers.append(layer)
                offset += layer.size
        self.n_encoder = len(enc_dims) - 1
        self.n_params = offset
        if params is None:
            params = np.zeros(offset)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (offset,):
            raise BadSpec(f"expected {offset} parameters, got {params.shape}")
        self.params = params.copy()

    def weights(self, i: int, buffer: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(W, b) views of layer ``i`` into ``buffer`` (default: the parameters)."""
        buf = self.params if buffer is None else buffer
        layer = self.layers[i]
        w_end = layer.offset + layer.fan_in * layer.fan_out
        W = buf[layer.offset:w_end].reshape(layer.fan_in, layer.fan_out)
        b = buf[w_end:w_end + layer.fan_out]
        return W, b

    def copy(self) -> "Model":
        return Model(self.spec, self.kind, self.params)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim


def init_model(spec: LayerSpec, kind: ModelKind | str = ModelKind.AE, seed: int = 0) -> Model:
    model = Model(spec, kind)
    rng = np.random.default_rng(seed)
    for i, layer in enumerate(model.layers):
        W, _ = model.weights(i)
        bound = 1.0 / np.sqrt(layer.fan_in)
        W[...] = rng.uniform(-bound, bound, size=W.shape)
    return model


@dataclass
class ForwardResult:
    reconstruction: np.ndarray
    latent: np.ndarray
    kl: float = 0.0
    mean: np.ndarray | None = None
    logvar: np.ndarray | None = None
    noise: np.ndarray | None = None
    cache: list = field(default_factory=list, repr=False)


def _run_layers(model: Model, h: np.ndarray, indices, cache: list) -> np.ndarray:
    for i in indices:
        W, b = model.weights(i)
        z = h @ W + b
        a = _activate(model.layers[i].activation, z)
        cache.append((i, h, z, a))
        h = a
    return h


def _check_batch(model: Model, batch) -> np.ndarray:
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.spec.input_dim:
        raise DimensionMismatch(f"batch must be N x {model.spec.input_dim}, got {X.shape}")
    return X


def forward(model: Model, batch, rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> ForwardResult:
    """Encode and decode a batch.

    For a VAE the latent sample is ``mean + exp(logvar / 2) * noise``; the
    noise comes from ``noise`` if given, else from ``rng``. With neither, the
    mean itself is decoded.
    """
    X = _check_batch(model, batch)
    cache: list = []
    code = _run_layers(model, X, range(model.n_encoder), cache)
    if model.kind is ModelKind.AE:
        recon = _run_layers(model, code, range(model.n_encoder, len(model.layers)), cache)
        return ForwardResult(recon, code, 0.0, cache=cache)

    L = model.latent_dim
    mu, logvar = code[:, :L], code[:, L:]
    if noise is None:
        noise = rng.standard_normal(mu.shape) if rng is not None else np.zeros_like(mu)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.shape:
        raise DimensionMismatch(f"noise must have shape {mu.shape}")
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    recon = _run_layers(model, z, range(model.n_encoder, len(model.layers)), cache)
    kl = float(np.mean(-0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=1)))
    return ForwardResult(recon, z, kl, mu, logvar, noise, cache)


def encode(model: Model, data) -> np.ndarray:
    """Latent code for each row; the VAE returns its mean head (no sampling)."""
    X = _check_batch(model, data)
    code = _run_layers(model, X, range(model.n_encoder), [])
    return code[:, : model.latent_dim] if model.kind is ModelKind.VAE else code


def reconstruct(model: Model, data) -> np.ndarray:
    return forward(model, data).reconstruction


def _backprop(model: Model, cache: list, grad_out: np.ndarray, grad: np.ndarray, stop: int) -> np.ndarray:
    """Back-propagate through cached layers down to (not including) index ``stop``."""
    delta = grad_out
    for i, h, z, a in reversed(cache):
        if i < stop:
            break
        delta = delta * _activation_grad(model.layers[i].activation, z, a)
        gW, gb = model.weights(i, grad)
        W, _ = model.weights(i)
        gW += h.T @ delta
        gb += delta.sum(axis=0)
        delta = delta @ W.T
    return delta


def loss_and_grad(
    model: Model,
    batch,
    kl_weight: float = 1.0,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> tuple[float, float, float, np.ndarray]:
    """Return ``(loss, mse, kl, grad)`` with loss = mse + kl_weight * kl.

    mse averages over rows and features; kl is the analytic divergence to
    N(0, I), summed over latent units and averaged over rows.
    """
    X = _check_batch(model, batch)
    out = forward(model, X, rng=rng, noise=noise)
    n, d = X.shape
    diff = out.reconstruction - X
    mse = float(np.mean(diff * diff))
    grad = np.zeros_like(model.params)
    delta = _backprop(model, out.cache, 2.0 * diff / (n * d), grad, model.n_encoder)
    if model.kind is ModelKind.AE:
        _backprop(model, out.cache[: model.n_encoder], delta, grad, 0)
        return mse, mse, 0.0, grad

    mu, logvar, eps = out.mean, out.logvar, out.noise
    std = np.exp(0.5 * logvar)
    g_mu = delta + kl_weight * mu / n
    g_logvar = delta * eps * 0.5 * std + kl_weight * 0.5 * (np.exp(logvar) - 1.0) / n
    _backprop(model, out.cache[: model.n_encoder], np.hstack([g_mu, g_logvar]), grad, 0)
    return mse + kl_weight * out.kl, mse, out.kl, grad


class Adam:
    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def gradient_check(model: Model, batch, seed: int = 0, step: float = 1e-5, kl_weight: float = 1.0) -> float:
    """Max relative error between backprop and central differences.

    VAE noise is drawn once from ``seed`` and held fixed. Relative error per
    parameter is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor turns the
    comparison absolute for gradients too small to resolve by differencing.
    """
    X = _check_batch(model, batch)
    noise = None
    if model.kind is ModelKind.VAE:
        noise = np.random.default_rng(seed).standard_normal((X.shape[0], model.latent_dim))
    _, _, _, analytic = loss_and_grad(model, X, kl_weight, noise=noise)
    numeric = np.zeros_like(analytic)
    probe = model.copy()
    for j in range(model.n_params):
        orig = probe.params[j]
        probe.params[j] = orig + step
        up = loss_and_grad(probe, X, kl_weight, noise=noise)[0]
        probe.params[j] = orig - step
        down = loss_and_grad(probe, X, kl_weight, noise=noise)[0]
        probe.params[j] = orig
        numeric[j] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int | None = 32  # None: full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    kl_weight: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise BadSpec("learning_rate must be > 0")
        if self.epochs < 1:
            raise BadSpec("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise BadSpec("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_mse: float
    val_kl: float
    val_fib: float
    val_grouped_fib: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainRun:
    spec: LayerSpec
    kind: ModelKind
    config: TrainConfig
    records: list[EpochRecord]
    best_epoch: int
    best_params: np.ndarray
    group_labels: list[str] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    @property
    def best(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    def best_model(self) -> Model:
        return Model(self.spec, self.kind, self.best_params)

    def csv_header(self) -> list[str]:
        return ["epoch", "train_loss", "val_loss", "val_mse", "val_kl", "val_fib",
                *(f"val_fib_{g}" for g in self.group_labels)]

    def csv_rows(self):
        for r in self.records:
            yield [r.epoch, r.train_loss, r.val_loss, r.val_mse, r.val_kl, r.val_fib,
                   *(r.val_grouped_fib[g] for g in self.group_labels)]

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.csv_header(), self.csv_rows())

    def metadata(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "kind": self.kind.value,
            "config": asdict(self.config),
            "best_epoch": self.best_epoch,
            "init_scheme": INIT_SCHEME,
            "group_labels": list(self.group_labels),
        }


def train(model: Model, data, cfg: TrainConfig, fib_specs: Sequence[GroupingSpec] = ()) -> TrainRun:
    """Mini-batch Adam on reconstruction loss, scoring the validation split each epoch.

    ``data`` needs ``train`` and ``val`` arrays. The model is updated in
    place; the returned run holds a parameter snapshot from the epoch with
    the lowest validation loss. Validation uses mean-decoded reconstructions.
    """
    X_train = _check_batch(model, data.train)
    X_val = _check_batch(model, data.val)
    for spec in fib_specs:
        if spec.k > X_val.shape[1]:
            raise BadSpec(f"cannot group {X_val.shape[1]} features into {spec.k} groups")
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam(model.n_params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    n = X_train.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    labels = [s.label for s in fib_specs]

    records: list[EpochRecord] = []
    best_epoch, best_loss, best_params = 0, np.inf, model.params.copy()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, _, _, grad = loss_and_grad(model, X_train[idx], cfg.kl_weight, rng=noise_rng)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            opt.step(model.params, grad)
            total += loss * len(idx)

        out = forward(model, X_val)
        diff = out.reconstruction - X_val
        val_mse = float(np.mean(diff * diff))
        val_loss = val_mse + cfg.kl_weight * out.kl
        if not np.isfinite(val_loss):
            raise DivergenceDetected(f"non-finite validation loss at epoch {epoch}")
        grouped = {
            s.label: grouped_fib_matrix(X_val, out.reconstruction, s, mode=MatrixMode.PER_FEATURE_AGGREGATE).fib
            for s in fib_specs
        }
        records.append(EpochRecord(
            epoch=epoch,
            train_loss=total / n,
            val_loss=val_loss,
            val_mse=val_mse,
            val_kl=out.kl,
            val_fib=fib_matrix(X_val, out.reconstruction, mode=MatrixMode.PER_FEATURE_AGGREGATE).fib,
            val_grouped_fib=grouped,
        ))
        if val_loss < best_loss:
            best_epoch, best_loss, best_params = epoch, val_loss, model.params.copy()

    return TrainRun(model.spec, model.kind, cfg, records, best_epoch, best_params, labels)


def save_params(path: str | Path, model: Model, meta: dict[str, Any] | None = None) -> None:
    """Write ``FIBP | u64 header length | JSON header | little-endian float64 params``."""
    header = {
        "format": "fibscore-params/1",
        "spec": model.spec.to_dict(),
        "kind": model.kind.value,
        "n_params": model.n_params,
        "dtype": "<f8",
        "layers": [[l.fan_in, l.fan_out, l.activation] for l in model.layers],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(model.params.astype("<f8").tobytes())


def load_params(path: str | Path) -> tuple[Model, dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise BadSpec(f"{path}: not a parameter snapshot")
    (size,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + size].decode("utf-8"))
    params = np.frombuffer(raw[12 + size:], dtype="<f8").astype(np.float64)
    model = Model(LayerSpec.from_dict(header["spec"]), header["kind"], params)
    return model, header.get("meta", {})
