"""Feed-forward models: forward pass, exact input gradients, seeded training.

Models are plain numpy weight stacks.  Classification heads emit softmax
posteriors; regression heads are identity.  The derivative of ReLU at 0 is
taken as 0 so gradients are reproducible.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset
from .errors import ConfigError, FormatError, ShapeError
from .rng import substream

WEIGHTS_SCHEMA = "corexplain.weights/1"


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    loss: str = "cross_entropy"  # or "mse"


@dataclass
class MLPModel:
    """Affine + activation stack with a softmax or identity head.

    ``layer_dims`` is (input d, hidden..., output width); weights[i] has shape
    (layer_dims[i], layer_dims[i+1]).  ``activation`` applies to hidden layers
    only ("relu" by default, "tanh" for smooth test models).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str  # "softmax" | "identity"
    activation: str = "relu"
    loss: str = "cross_entropy"
    train_stats: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Batch forward: (n, C) class posteriors or (n,) regression values."""
        return forward(self, X)


def _act(model: MLPModel, z: np.ndarray) -> np.ndarray:
    if model.activation == "relu":
        return np.maximum(z, 0.0)
    if model.activation == "tanh":
        return np.tanh(z)
    raise ConfigError(f"unknown activation {model.activation!r}")


def _act_grad(model: MLPModel, z: np.ndarray) -> np.ndarray:
    if model.activation == "relu":
        return (z > 0.0).astype(np.float64)
    if model.activation == "tanh":
        return 1.0 - np.tanh(z) ** 2
    raise ConfigError(f"unknown activation {model.activation!r}")


def _forward_cached(model: MLPModel, X: np.ndarray):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} columns, got {X.shape[1]}")
    pre = []
    h = X
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = _act(model, z) if i < len(model.weights) - 1 else z
    return X, pre, h


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_lean(model: MLPModel, X: np.ndarray) -> np.ndarray:
    """Pre-head activations without caching; in-place where possible."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} columns, got {X.shape[1]}")
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W
        z += b
        if i < last:
            if model.activation == "relu":
                np.maximum(z, 0.0, out=z)
            else:
                np.tanh(z, out=z)
        h = z
    return h


def forward(model: MLPModel, X: np.ndarray) -> np.ndarray:
    z = _forward_lean(model, X)
    if model.head == "softmax":
        return _softmax(z)
    if model.head == "identity":
        return z[:, 0] if model.output_dim == 1 else z
    raise ConfigError(f"unknown head {model.head!r}")


def grad_input(model: MLPModel, X: np.ndarray, class_index: int | None = None) -> np.ndarray:
    """Exact reverse-mode gradient of the explained scalar w.r.t. each input row.

    For softmax heads, ``class_index`` selects the explained posterior; for
    identity heads the (single) regression output is used.
    """
    single = np.asarray(X).ndim == 1
    X, pre, z = _forward_cached(model, X)
    if model.head == "softmax":
        if class_index is None:
            class_index = 1
        if not 0 <= class_index < model.output_dim:
            raise ConfigError(f"class index {class_index} out of range [0, {model.output_dim})")
        p = _softmax(z)
        # d p_c / d z_k = p_c (1[k = c] - p_k)
        delta = -p * p[:, [class_index]]
        delta[:, class_index] += p[:, class_index]
    else:
        if model.output_dim != 1:
            raise ConfigError("identity head gradient requires a single output")
        delta = np.ones((X.shape[0], 1))
    for i in range(len(model.weights) - 1, 0, -1):
        delta = (delta @ model.weights[i].T) * _act_grad(model, pre[i - 1])
    g = delta @ model.weights[0].T
    return g[0] if single else g


def _forward_lean32(model: MLPModel, X: np.ndarray, weights32, biases32) -> np.ndarray:
    h = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float32)
    if h.shape[1] != model.input_dim:
        raise ShapeError(f"expected {model.input_dim} columns, got {h.shape[1]}")
    last = len(weights32) - 1
    for i, (W, b) in enumerate(zip(weights32, biases32)):
        z = h @ W
        z += b
        if i < last:
            if model.activation == "relu":
                np.maximum(z, 0.0, out=z)
            else:
                np.tanh(z, out=z)
        h = z
    return h


def scalar_function(model: MLPModel, class_index: int | None = 1, single_precision: bool = False):
    """Callable (batch of d-vectors) -> batch of reals: the explained output.

    Classification models expose the posterior of ``class_index`` (the second
    class by default); regression models expose the predicted value.  With
    ``single_precision`` the forward pass runs in float32 (roughly twice the
    throughput; ~1e-7 relative rounding), for large benchmark sweeps.
    """
    if model.head == "softmax":
        idx = 1 if class_index is None else class_index
        if not 0 <= idx < model.output_dim:
            raise ConfigError(f"class index {idx} out of range [0, {model.output_dim})")
        if model.output_dim == 2:
            # One sigmoid instead of a full softmax for the binary case.
            other = 1 - idx
            if single_precision:
                W32 = [W.astype(np.float32) for W in model.weights]
                b32 = [b.astype(np.float32) for b in model.biases]

                def fn32(X):
                    z = _forward_lean32(model, X, W32, b32)
                    return 1.0 / (1.0 + np.exp(z[:, other] - z[:, idx]))

                return fn32

            def fn(X):
                z = _forward_lean(model, X)
                return 1.0 / (1.0 + np.exp(z[:, other] - z[:, idx]))

            return fn

        def fn(X):
            return forward(model, X)[:, idx]

        return fn
    if single_precision and model.head == "identity" and model.output_dim == 1:
        W32 = [W.astype(np.float32) for W in model.weights]
        b32 = [b.astype(np.float32) for b in model.biases]
        return lambda X: _forward_lean32(model, X, W32, b32)[:, 0]
    return lambda X: np.atleast_1d(forward(model, X))


def predict_function(model: MLPModel, single_precision: bool = False):
    """Callable returning the model's full output (class probabilities or values)."""
    if not single_precision:
        return model.predict
    W32 = [W.astype(np.float32) for W in model.weights]
    b32 = [b.astype(np.float32) for b in model.biases]

    def fn(X):
        z = _forward_lean32(model, X, W32, b32)
        if model.head == "softmax":
            z = z - z.max(axis=1, keepdims=True)
            np.exp(z, out=z)
            z /= z.sum(axis=1, keepdims=True)
            return z
        return z[:, 0] if model.output_dim == 1 else z

    return fn


def init_model(
    layer_dims: tuple[int, ...],
    head: str,
    seed: int = 0,
    activation: str = "relu",
    loss: str = "cross_entropy",
) -> MLPModel:
    """He-style uniform initialization scaled by fan-in, seeded."""
    rng = substream(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPModel(
        layer_dims=tuple(layer_dims), weights=weights, biases=biases,
        head=head, activation=activation, loss=loss,
    )


def train(data: Dataset, config: TrainConfig, hidden: tuple[int, ...] = (128, 64)) -> MLPModel:
    """Mini-batch gradient descent on the configured loss; deterministic per seed."""
    if data.labels is None:
        raise ConfigError("training requires a labeled dataset")
    if config.loss not in ("cross_entropy", "mse"):
        raise ConfigError(f"unknown loss {config.loss!r}")
    if data.task_kind == CLASSIFICATION and config.loss != "cross_entropy":
        raise ConfigError("classification training uses the cross_entropy loss")
    if data.task_kind == REGRESSION and config.loss != "mse":
        raise ConfigError("regression training uses the mse loss")

    X, y = data.features, data.labels
    if data.task_kind == CLASSIFICATION:
        n_out = data.n_classes
        head = "softmax"
        y_int = y.astype(np.int64)
    else:
        n_out = 1
        head = "identity"

    model = init_model((data.d, *hidden, n_out), head=head, seed=config.seed, loss=config.loss)
    rng = substream(config.seed, "batches")
    lr = config.learning_rate

    for _ in range(config.epochs):
        order = rng.permutation(data.n)
        for start in range(0, data.n, config.batch_size):
            idx = order[start : start + config.batch_size]
            Xb = X[idx]
            _, pre, z = _forward_cached(model, Xb)
            if head == "softmax":
                p = _softmax(z)
                grad_z = p.copy()
                grad_z[np.arange(len(idx)), y_int[idx]] -= 1.0
                grad_z /= len(idx)
            else:
                grad_z = 2.0 * (z[:, 0] - y[idx])[:, None] / len(idx)

            acts = [Xb] + [_act(model, p_) for p_ in pre[:-1]]
            delta = grad_z
            for i in range(len(model.weights) - 1, -1, -1):
                gW = acts[i].T @ delta
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ model.weights[i].T) * _act_grad(model, pre[i - 1])
                model.weights[i] -= lr * gW
                model.biases[i] -= lr * gb

    out = forward(model, X)
    if head == "softmax":
        acc = float((out.argmax(axis=1) == y_int).mean())
        model.train_stats = {"train_accuracy": acc}
    else:
        resid = out - y
        model.train_stats = {"train_rmse": float(np.sqrt((resid**2).mean()))}
    return model


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _unb64(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8").reshape(shape).copy()


def save_weights(model: MLPModel, path: str) -> None:
    payload = {
        "schema": WEIGHTS_SCHEMA,
        "layer_dims": list(model.layer_dims),
        "head": model.head,
        "activation": model.activation,
        "loss": model.loss,
        "weights_b64": [_b64(W) for W in model.weights],
        "biases_b64": [_b64(b) for b in model.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_weights(path: str) -> MLPModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: truncated or invalid weight file: {exc}") from exc
    if payload.get("schema") != WEIGHTS_SCHEMA:
        raise FormatError(f"{path}: unexpected weights schema {payload.get('schema')!r}")
    try:
        dims = tuple(int(v) for v in payload["layer_dims"])
        weights = [
            _unb64(s, (dims[i], dims[i + 1])) for i, s in enumerate(payload["weights_b64"])
        ]
        biases = [_unb64(s, (dims[i + 1],)) for i, s in enumerate(payload["biases_b64"])]
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise FormatError(f"{path}: layer count does not match layer_dims")
        return MLPModel(
            layer_dims=dims,
            weights=weights,
            biases=biases,
            head=payload["head"],
            activation=payload.get("activation", "relu"),
            loss=payload.get("loss", "cross_entropy"),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed weight file: {exc}") from exc
