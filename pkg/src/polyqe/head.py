"""Trainable regression head: forward pass, backprop, AdamW, checkpoints.

The head is a plain MLP over assembled feature vectors with shape
[F, 2048, 1024, M] by default, where M > 1 when the head jointly predicts
scores for additional translations. Everything is float64 numpy; training
is bit-reproducible given (seed, config, data order). Predictions live on
the [0, 1] training scale; callers multiply by 100 for reporting.

Large effective batches are trained via gradient accumulation over
micro-batches with update math identical to a single full batch.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import validation
from .errors import DataFormatError, PolyqeError
from .features import FeatureLayout, FeatureVector

CHECKPOINT_MAGIC = b"PQH1"
ACTIVATIONS = ("tanh", "relu")
DEFAULT_HIDDEN = (2048, 1024)


class TrainingDiverged(PolyqeError):
    """Training hit a non-finite loss (learning rate too high or bad data)."""


@dataclass
class MlpHead:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    layout: Optional[FeatureLayout] = None

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]


def new_head(
    n_inputs: int,
    n_outputs: int = 1,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    activation: str = "tanh",
    seed: int = 0,
    layout: Optional[FeatureLayout] = None,
) -> MlpHead:
    """Glorot-uniform initialized head, deterministic for a given seed."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation '{activation}', expected one of {ACTIVATIONS}")
    if layout is not None and layout.expected_length() != n_inputs:
        raise ValueError(
            f"layout expects {layout.expected_length()} features, head takes {n_inputs}"
        )
    sizes = [n_inputs, *hidden, n_outputs]
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive: {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpHead(weights=weights, biases=biases, activation=activation, layout=layout)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def forward_batch(head: MlpHead, X) -> np.ndarray:
    """Predictions of shape (batch, M); hidden layers use the head's activation."""
    X = validation.as_float_matrix(X)
    if X.shape[1] != head.n_inputs:
        raise ValueError(f"features have length {X.shape[1]}, head takes {head.n_inputs}")
    a = X
    last = len(head.weights) - 1
    for i, (W, b) in enumerate(zip(head.weights, head.biases)):
        z = a @ W + b
        a = _activate(z, head.activation) if i < last else z
    return a


def forward(head: MlpHead, fv) -> np.ndarray:
    """Predictions (length M) for a single feature vector."""
    values = fv.values if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=np.float64)
    return forward_batch(head, values[None, :])[0]


def loss(head: MlpHead, X, Y) -> float:
    """Mean over the batch of the per-example mean squared error across targets."""
    X = validation.as_float_matrix(X)
    Y = validation.as_target_matrix(Y, X.shape[0])
    pred = forward_batch(head, X)
    if pred.shape != Y.shape:
        raise ValueError(f"targets have shape {Y.shape}, predictions {pred.shape}")
    return float(np.mean((pred - Y) ** 2))


def flatten_params(head: MlpHead) -> np.ndarray:
    parts = []
    for W, b in zip(head.weights, head.biases):
        parts.append(W.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def set_flat_params(head: MlpHead, flat: np.ndarray) -> None:
    offset = 0
    for W, b in zip(head.weights, head.biases):
        W[...] = flat[offset : offset + W.size].reshape(W.shape)
        offset += W.size
        b[...] = flat[offset : offset + b.size]
        offset += b.size
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, head needs {offset}")


def gradients(head: MlpHead, X, Y) -> np.ndarray:
    """Analytic gradient of :func:`loss` w.r.t. all parameters, flattened."""
    X = validation.as_float_matrix(X)
    Y = validation.as_target_matrix(Y, X.shape[0])
    activations = [X]
    pre_activations = []
    a = X
    last = len(head.weights) - 1
    for i, (W, b) in enumerate(zip(head.weights, head.biases)):
        z = a @ W + b
        pre_activations.append(z)
        a = _activate(z, head.activation) if i < last else z
        activations.append(a)
    batch, n_targets = Y.shape
    delta = 2.0 * (activations[-1] - Y) / (batch * n_targets)
    grads_w = [None] * len(head.weights)
    grads_b = [None] * len(head.biases)
    for i in range(last, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ head.weights[i].T) * _activation_grad(
                pre_activations[i - 1], activations[i], head.activation
            )
    parts = []
    for gW, gb in zip(grads_w, grads_b):
        parts.append(gW.ravel())
        parts.append(gb.ravel())
    return np.concatenate(parts)


@dataclass
class TrainConfig:
    learning_rate: float = 1.5e-5
    batch_size: int = 256
    micro_batch_size: Optional[int] = None
    epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if self.micro_batch_size is not None and self.micro_batch_size < 1:
            raise ValueError("micro batch size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def train(head: MlpHead, X, Y, cfg: Optional[TrainConfig] = None) -> tuple[MlpHead, list[float]]:
    """AdamW training in place; returns the head and the per-epoch loss trace.

    Each effective batch accumulates micro-batch gradients weighted by
    micro-batch size, so the update equals the one a single full batch
    would produce.
    """
    cfg = cfg or TrainConfig()
    X = validation.as_float_matrix(X)
    Y = validation.as_target_matrix(Y, X.shape[0])
    if Y.shape[1] != head.n_outputs:
        raise ValueError(f"targets have {Y.shape[1]} columns, head emits {head.n_outputs}")
    n = X.shape[0]
    micro = cfg.micro_batch_size or cfg.batch_size
    rng = np.random.default_rng(cfg.seed)
    flat = flatten_params(head)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    step = 0
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grad = np.zeros_like(flat)
            batch_loss = 0.0
            for mstart in range(0, idx.size, micro):
                midx = idx[mstart : mstart + micro]
                weight = midx.size / idx.size
                grad += weight * gradients(head, X[midx], Y[midx])
                batch_loss += weight * loss(head, X[midx], Y[midx])
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch + 1}: "
                    "learning rate too high or bad data"
                )
            epoch_loss += batch_loss * idx.size
            step += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / (1.0 - cfg.beta1**step)
            v_hat = v / (1.0 - cfg.beta2**step)
            flat = flat - cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                                               + cfg.weight_decay * flat)
            set_flat_params(head, flat)
        trace.append(epoch_loss / n)
    return head, trace


def save_checkpoint(head: MlpHead, cfg: Optional[TrainConfig], path) -> None:
    """Byte-deterministic checkpoint with a trailing SHA-256 content checksum."""
    header = {
        "activation": head.activation,
        "layer_sizes": head.layer_sizes,
        "layout": head.layout.to_dict() if head.layout is not None else None,
        "train_config": cfg.to_dict() if cfg is not None else None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for W, b in zip(head.weights, head.biases):
        blob += np.ascontiguousarray(W, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[MlpHead, Optional[TrainConfig]]:
    data = Path(path).read_bytes()
    if len(data) < 40 or data[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch, file is corrupt or truncated")
    header_len = struct.unpack_from("<I", data, 4)[0]
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    sizes = header["layer_sizes"]
    offset = 8 + header_len
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(body, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(body, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(W.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(body):
        raise DataFormatError(f"{path}: parameter payload has unexpected size")
    layout = FeatureLayout.from_dict(header["layout"]) if header["layout"] else None
    cfg = TrainConfig(**header["train_config"]) if header["train_config"] else None
    head = MlpHead(weights=weights, biases=biases, activation=header["activation"], layout=layout)
    return head, cfg


def ensure_layout(head: MlpHead, expected: FeatureLayout) -> None:
    """Reject scoring with a head trained for a different feature contract."""
    if head.layout is None:
        raise DataFormatError("checkpoint carries no feature layout, cannot validate mode")
    if head.layout != expected:
        raise DataFormatError(
            f"checkpoint was trained for {head.layout.to_dict()}, "
            f"requested {expected.to_dict()}"
        )


class MlpScoreRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn style facade over the head: fit(X, y) / predict(X).

    X rows are assembled feature vectors; y holds targets on the [0, 1]
    scale, one column per prediction slot for joint heads.
    """

    def __init__(
        self,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        activation: str = "tanh",
        learning_rate: float = 1.5e-5,
        batch_size: int = 256,
        micro_batch_size: Optional[int] = None,
        epochs: int = 5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.micro_batch_size = micro_batch_size
        self.epochs = epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            micro_batch_size=self.micro_batch_size,
            epochs=self.epochs,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )

    def fit(self, X, y, layout: Optional[FeatureLayout] = None) -> "MlpScoreRegressor":
        X = validation.as_float_matrix(X)
        Y = validation.as_target_matrix(y, X.shape[0])
        self.single_output_ = np.asarray(y).ndim == 1
        self.head_ = new_head(
            n_inputs=X.shape[1],
            n_outputs=Y.shape[1],
            hidden=tuple(self.hidden),
            activation=self.activation,
            seed=self.seed,
            layout=layout,
        )
        _, self.loss_trace_ = train(self.head_, X, Y, self._train_config())
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "head_"):
            raise ValueError("regressor is not fitted")
        pred = forward_batch(self.head_, X)
        return pred[:, 0] if self.single_output_ else pred
