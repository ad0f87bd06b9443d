"""Dense ReLU networks with analytic backpropagation and Adam.

All network parameters live in one flat float64 vector.  ``MlpSpec.unpack``
returns per-layer ``(W, b)`` views into that vector, so gradients and Adam
moments share the same layout and checkpoints are a single array.

The same machinery serves the target regressor and the autoencoder; the
encoder is simply the first half of the autoencoder's layer stack.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; ReLU on hidden layers, linear output."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def parameter_count(self) -> int:
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer ``(W, b)`` views into ``params``; W has shape (fan_in, fan_out)."""
        if params.shape != (self.parameter_count(),):
            raise ValueError(
                f"expected {self.parameter_count()} parameters, got shape {params.shape}"
            )
        layers = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            W = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset : offset + fan_out]
            offset += fan_out
            layers.append((W, b))
        return layers


@dataclass(frozen=True)
class AutoencoderSpec:
    """Symmetric autoencoder; encoder widths run input -> ... -> bottleneck."""

    n_inputs: int
    hidden: tuple[int, ...] = (8, 4)
    bottleneck: int = 2

    def __post_init__(self):
        if self.bottleneck != 2:
            raise ValueError("the latent bottleneck must have exactly 2 units")

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return (self.n_inputs, *self.hidden, self.bottleneck)

    @property
    def mlp(self) -> MlpSpec:
        enc = self.encoder_widths
        return MlpSpec(enc + enc[-2::-1])

    @property
    def encoder(self) -> MlpSpec:
        return MlpSpec(self.encoder_widths)

    def encoder_params(self, params: np.ndarray) -> np.ndarray:
        return params[: self.encoder.parameter_count()]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 10
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """He-style fan-in uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.parameter_count())
    for W, _ in spec.unpack(params):
        fan_in = W.shape[0]
        limit = np.sqrt(6.0 / fan_in)
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.n_inputs:
        raise ValueError(f"input width {x.shape[-1]} does not match spec input {spec.n_inputs}")
    return x, single


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    """Apply the network to one input vector or a batch of rows."""
    h, single = _as_batch(spec, x)
    layers = spec.unpack(params)
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    out = h @ W + b
    return out[0] if single else out


def loss_and_grad(spec: MlpSpec, params: np.ndarray, X, y) -> tuple[float, np.ndarray]:
    """Mean squared error over the batch and its exact gradient.

    The loss averages over rows and output units, so a width-1 output gives
    the plain per-sample MSE.
    """
    X, _ = _as_batch(spec, X)
    y = np.asarray(y, dtype=float).reshape(len(X), spec.n_outputs)
    if len(X) == 0:
        raise ValueError("empty batch")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FloatingPointError("non-finite values in batch")
    grad = np.zeros_like(params)
    loss = _loss_and_grad_into(spec.unpack(params), spec.unpack(grad), X, y)
    return loss, grad


def _loss_and_grad_into(layers, grad_layers, X, y) -> float:
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    resid = h @ W + b - y
    loss = float(np.mean(resid * resid))

    delta = resid * (2.0 / resid.size)
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = grad_layers[i]
        np.matmul(acts[i].T, delta, out=gW)
        np.sum(delta, axis=0, out=gb)
        if i:
            delta = (delta @ layers[i][0].T) * (acts[i] > 0)
    return loss


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, config: TrainConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad and state must have matching shapes")
    t = state.t + 1
    m = BETA1 * state.m + (1 - BETA1) * grad
    v = BETA2 * state.v + (1 - BETA2) * grad * grad
    m_hat = m / (1 - BETA1**t)
    v_hat = v / (1 - BETA2**t)
    new = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + EPSILON)
    return new, AdamState(m, v, t)


def _epoch_order(n: int, config: TrainConfig, epoch: int) -> np.ndarray:
    if not config.shuffle:
        return np.arange(n)
    return np.random.default_rng([config.seed, epoch]).permutation(n)


def fit(
    spec: MlpSpec,
    X: np.ndarray,
    Y: np.ndarray,
    config: TrainConfig,
    X_val: np.ndarray | None = None,
    Y_val: np.ndarray | None = None,
    params: np.ndarray | None = None,
) -> tuple[np.ndarray, History]:
    """Minibatch Adam on the mean squared error.

    Equivalent to repeated ``loss_and_grad`` + ``adam_step`` calls; the inner
    loop updates preallocated buffers in place to keep per-step overhead low.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), spec.n_outputs)
    if params is None:
        params = init_params(spec, config.seed)
    params = params.copy()
    grad = np.zeros_like(params)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    layers = spec.unpack(params)
    grad_layers = spec.unpack(grad)
    lr = config.learning_rate
    t = 0
    history = History()
    n = len(X)
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = _epoch_order(n, config, epoch)
        Xs, Ys = X[order], Y[order]
        total = 0.0
        for start in range(0, n, bs):
            xb = Xs[start : start + bs]
            yb = Ys[start : start + bs]
            total += _loss_and_grad_into(layers, grad_layers, xb, yb) * len(xb)
            t += 1
            m *= BETA1
            m += (1 - BETA1) * grad
            v *= BETA2
            v += (1 - BETA2) * (grad * grad)
            step = lr * np.sqrt(1 - BETA2**t) / (1 - BETA1**t)
            params -= step * m / (np.sqrt(v) + EPSILON * np.sqrt(1 - BETA2**t))
        train_loss = total / n
        if not np.isfinite(train_loss):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        history.train_loss.append(train_loss)
        if X_val is not None:
            pred = forward(spec, params, X_val)
            resid = pred - np.asarray(Y_val, dtype=float).reshape(pred.shape)
            history.val_loss.append(float(np.mean(resid * resid)))
        logger.debug("epoch %d train %.6g", epoch, train_loss)
    return params, history


# --------------------------------------------------------------------------
# cohort-level models

REGRESSOR_HIDDEN = (16, 16, 8)


def regressor_spec(n_inputs: int, hidden: tuple[int, ...] = REGRESSOR_HIDDEN) -> MlpSpec:
    return MlpSpec((n_inputs, *hidden, 1))


@dataclass(frozen=True, eq=False)
class Regressor:
    """Trained target model.

    The network is fit to the standardized target; ``predict`` maps back to
    target units.
    """

    spec: MlpSpec
    params: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0
    config_hash: str = ""

    def predict(self, X) -> np.ndarray:
        out = forward(self.spec, self.params, X)
        return out[..., 0] * self.target_std + self.target_mean

    def digest(self) -> str:
        return _digest(self.spec, self.params, self.target_mean, self.target_std)


@dataclass(frozen=True, eq=False)
class Autoencoder:
    spec: AutoencoderSpec
    params: np.ndarray
    config_hash: str = ""

    def encode(self, X) -> np.ndarray:
        return encode(self.spec, self.params, X)

    def reconstruct(self, X) -> np.ndarray:
        return forward(self.spec.mlp, self.params, X)

    def digest(self) -> str:
        return _digest(self.spec.mlp, self.params)


def _digest(spec: MlpSpec, params: np.ndarray, *extra: float) -> str:
    h = hashlib.sha256(repr(spec.layer_widths).encode())
    h.update(np.ascontiguousarray(params, dtype="<f8").tobytes())
    h.update(np.asarray(extra, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def train_regressor(train, val, spec: MlpSpec | None = None, config: TrainConfig | None = None):
    """Fit the target model on a normalized cohort.

    Returns the :class:`Regressor` and the per-epoch history of train and
    validation MSE (in standardized target units).
    """
    config = config or TrainConfig()
    spec = spec or regressor_spec(train.features.shape[1])
    if val is not None and val.schema != train.schema:
        raise ValueError("train and validation cohorts must share a schema")
    if spec.n_inputs != train.features.shape[1] or spec.n_outputs != 1:
        raise ValueError("regressor spec does not match the cohort width")
    mu = float(train.target.mean())
    sd = float(train.target.std()) or 1.0
    params, history = fit(
        spec,
        train.features,
        (train.target - mu) / sd,
        config,
        X_val=None if val is None else val.features,
        Y_val=None if val is None else (val.target - mu) / sd,
    )
    return Regressor(spec, params, mu, sd, config.digest()), history


def train_autoencoder(train, spec: AutoencoderSpec | None = None, config: TrainConfig | None = None) -> Autoencoder:
    """Fit the autoencoder to reconstruct the (normalized) feature vectors.

    The target column is not part of the input.
    """
    config = config or TrainConfig(epochs=50)
    X = train.features
    spec = spec or AutoencoderSpec(X.shape[1])
    if spec.n_inputs != X.shape[1]:
        raise ValueError("autoencoder spec does not match the cohort width")
    params, _ = fit(spec.mlp, X, X, config)
    return Autoencoder(spec, params, config.digest())


def encode(spec: AutoencoderSpec, params: np.ndarray, X) -> np.ndarray:
    """Latent coordinates (n x 2) from the encoder half of the autoencoder."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return forward(spec.encoder, spec.encoder_params(params), X)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Regressor | Autoencoder, path: str | Path, normalization=None) -> None:
    """JSON container: spec, flat parameters, normalization stats, config hash."""
    if isinstance(model, Regressor):
        body = {
            "kind": "regressor",
            "layer_widths": list(model.spec.layer_widths),
            "target_mean": model.target_mean,
            "target_std": model.target_std,
        }
    else:
        body = {
            "kind": "autoencoder",
            "n_inputs": model.spec.n_inputs,
            "hidden": list(model.spec.hidden),
            "bottleneck": model.spec.bottleneck,
        }
    body.update(
        version=CHECKPOINT_VERSION,
        params=model.params.tolist(),
        config_hash=model.config_hash,
        normalization=None if normalization is None else normalization.to_dict(),
    )
    Path(path).write_text(json.dumps(body) + "\n")


def load_checkpoint(path: str | Path):
    """Returns ``(model, normalization_dict_or_None)``."""
    body = json.loads(Path(path).read_text())
    if body.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {body.get('version')!r}")
    params = np.asarray(body["params"], dtype=float)
    if body["kind"] == "regressor":
        model = Regressor(
            MlpSpec(tuple(body["layer_widths"])),
            params,
            body["target_mean"],
            body["target_std"],
            body["config_hash"],
        )
    elif body["kind"] == "autoencoder":
        spec = AutoencoderSpec(body["n_inputs"], tuple(body["hidden"]), body["bottleneck"])
        model = Autoencoder(spec, params, body["config_hash"])
    else:
        raise ValueError(f"unknown checkpoint kind {body['kind']!r}")
    return model, body.get("normalization")
