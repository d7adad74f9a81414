"""Dense feedforward classifiers with exact backpropagation.

Networks map an input vector to raw (unnormalized) scores.  A network whose
last layer has width one is a binary classifier ``sgn(g(x))`` with the
convention ``sgn(0) = 1``; labels are stored as ``{0, 1}`` and the signed
label is ``2y - 1``.  Wider heads classify by ``argmax`` with ties broken
toward the lowest index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "heaviside", "identity")
LOSSES = ("cross_entropy", "hinge")
OPTIMIZERS = ("sgd", "adam")

# temperature of the sigmoid used as the Heaviside surrogate derivative
HEAVISIDE_TEMPERATURE = 10.0

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


@dataclass
class Network:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def is_binary(self) -> bool:
        return self.layer_dims[-1] == 1

    @property
    def n_classes(self) -> int:
        return 2 if self.is_binary else self.layer_dims[-1]

    @property
    def param_count(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Scores for a batch ``X`` of shape (n, d); returns (n, C)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"expected inputs of shape (n, {self.input_dim}), got {X.shape}"
            )
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            h = z if l == last else _activate(self.activation, z)
        return h

    def predict(self, X: np.ndarray) -> np.ndarray:
        return labels_from_scores(self.scores(X))

    def copy(self) -> "Network":
        return Network(
            list(self.layer_dims),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.seed,
        )


def labels_from_scores(S: np.ndarray) -> np.ndarray:
    """Class indices from an (n, C) score matrix.

    Width-one heads give label 1 when ``g >= 0``; ``np.argmax`` already
    returns the lowest maximizing index.
    """
    if S.shape[1] == 1:
        return (S[:, 0] >= 0).astype(np.int64)
    return np.argmax(S, axis=1).astype(np.int64)


def init_network(
    layer_dims: Sequence[int], activation: str = "relu", seed: int = 0
) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    dims = [int(k) for k in layer_dims]
    if len(dims) < 2:
        raise ValueError("layer_dims needs at least an input and an output size")
    if any(k < 1 for k in dims):
        raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(dims, weights, biases, activation, int(seed))


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Score vector g(x) for a single input of length d."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected input of length {net.input_dim}, got {x.shape}")
    return net.scores(x[None, :])[0]


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "heaviside":
        return (z >= 0).astype(np.float64)
    return z


def _activation_grad(kind: str, z: np.ndarray, surrogate: bool) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "heaviside":
        if not surrogate:
            raise ValueError(
                "heaviside activations have no gradient; enable the surrogate"
            )
        s = 0.5 * (1.0 + np.tanh(0.5 * HEAVISIDE_TEMPERATURE * z))
        return HEAVISIDE_TEMPERATURE * s * (1.0 - s)
    return np.ones_like(z)


def _forward_cache(net: Network, X: np.ndarray):
    """Layer inputs and preactivations for backpropagation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(
            f"expected inputs of shape (n, {net.input_dim}), got {X.shape}"
        )
    inputs, pre = [], []
    h = X
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        h = z if l == last else _activate(net.activation, z)
    return inputs, pre, h


def _backward(net: Network, inputs, pre, dS: np.ndarray, surrogate: bool, want_params: bool):
    """Propagate the score cotangent ``dS`` back through the network.

    Returns (dX, [(dW, db), ...]); parameter gradients are summed over rows.
    """
    grads = []
    delta = dS
    for l in range(len(net.weights) - 1, -1, -1):
        if want_params:
            grads.append((delta.T @ inputs[l], delta.sum(axis=0)))
        delta = delta @ net.weights[l]
        if l > 0:
            delta = delta * _activation_grad(net.activation, pre[l - 1], surrogate)
    grads.reverse()
    return delta, grads


def grad_input(
    net: Network, x: np.ndarray, cotangent: np.ndarray, surrogate: bool = False
) -> np.ndarray:
    """Gradient w.r.t. the input of the scalar ``cotangent . g(x)``.

    ``x`` may be a single vector with a length-C cotangent, or a batch (n, d)
    with an (n, C) cotangent, in which case one gradient per row is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, cot = x[None, :], cot.reshape(1, -1)
    if cot.shape != (x.shape[0], net.output_dim):
        raise ValueError(f"cotangent shape {cot.shape} does not match scores")
    inputs, pre, _ = _forward_cache(net, x)
    dX, _ = _backward(net, inputs, pre, cot, surrogate, want_params=False)
    return dX[0] if single else dX


def loss_and_score_grad(S: np.ndarray, y: np.ndarray, loss: str):
    """Mean loss over the batch and its gradient w.r.t. the scores."""
    n = S.shape[0]
    y = np.asarray(y, dtype=np.int64)
    if S.shape[1] == 1:
        s = 2.0 * y - 1.0
        m = s * S[:, 0]
        if loss == "cross_entropy":
            value = np.logaddexp(0.0, -m).mean()
            # d/dm log(1 + e^-m) = -sigmoid(-m)
            g = -s * 0.5 * (1.0 - np.tanh(0.5 * m))
        elif loss == "hinge":
            value = np.maximum(0.0, 1.0 - m).mean()
            g = -s * (m < 1.0)
        else:
            raise ValueError(f"unknown loss {loss!r}")
        return value, (g / n)[:, None]
    rows = np.arange(n)
    if loss == "cross_entropy":
        shifted = S - S.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        value = (logz - shifted[rows, y]).mean()
        G = np.exp(shifted - logz[:, None])
        G[rows, y] -= 1.0
        return value, G / n
    if loss == "hinge":
        others = S.copy()
        others[rows, y] = -np.inf
        k = np.argmax(others, axis=1)
        viol = 1.0 + S[rows, k] - S[rows, y]
        active = viol > 0
        value = np.maximum(viol, 0.0).mean()
        G = np.zeros_like(S)
        G[rows[active], k[active]] += 1.0
        G[rows[active], y[active]] -= 1.0
        return value, G / n
    raise ValueError(f"unknown loss {loss!r}")


def grad_weights(
    net: Network,
    X: np.ndarray,
    y: np.ndarray,
    loss: str = "cross_entropy",
    surrogate: bool = False,
):
    """Mean batch loss and its per-layer gradients ``[(dW, db), ...]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    inputs, pre, S = _forward_cache(net, X)
    value, dS = loss_and_score_grad(S, y, loss)
    _, grads = _backward(net, inputs, pre, dS, surrogate, want_params=True)
    return value, grads


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    target_train_accuracy: float = 0.99
    loss: str = "cross_entropy"
    seed: int = 0
    stop_on_target: bool = True
    heaviside_surrogate: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 0.0 <= self.target_train_accuracy <= 1.0:
            raise ValueError("target_train_accuracy must lie in [0, 1]")


@dataclass
class TrainedModel:
    network: Network
    epochs: int
    train_accuracy: float
    test_accuracy: Optional[float]
    target_met: bool
    loss_history: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def accuracy(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(net.predict(X) == np.asarray(y)))


def train(net: Network, dataset, config: TrainConfig, test=None) -> TrainedModel:
    """Mini-batch training until the target train accuracy or ``max_epochs``.

    ``dataset`` and ``test`` are objects with ``inputs`` and ``labels``.  The
    input network is left untouched; the trained copy is returned.
    """
    X = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise ValueError(f"labels must lie in [0, {net.n_classes})")

    net = net.copy()
    params = []
    for W, b in zip(net.weights, net.biases):
        params.extend([W, b])
    if config.optimizer == "adam":
        opt = _Adam([p.shape for p in params], config.learning_rate)
    else:
        opt = _SGD(config.learning_rate)

    rng = np.random.default_rng(config.seed)
    history = []
    epochs = 0
    train_acc = accuracy(net, X, y)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grads = grad_weights(
                net, X[idx], y[idx], config.loss, config.heaviside_surrogate
            )
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            total += value * len(idx)
            flat = [g for pair in grads for g in pair]
            opt.step(params, flat)
        history.append(total / n)
        epochs = epoch
        train_acc = accuracy(net, X, y)
        if config.stop_on_target and train_acc >= config.target_train_accuracy:
            break

    test_acc = None
    if test is not None:
        test_acc = accuracy(net, test.inputs, test.labels)
    return TrainedModel(
        network=net,
        epochs=epochs,
        train_accuracy=train_acc,
        test_accuracy=test_acc,
        target_met=train_acc >= config.target_train_accuracy,
        loss_history=history,
    )


def network_to_dict(net: Network, train_meta: Optional[dict] = None) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": net.seed,
        "train_meta": dict(train_meta or {}),
    }


def network_from_dict(obj: dict) -> tuple[Network, dict]:
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('format_version')!r}")
    dims = [int(k) for k in obj["layer_dims"]]
    weights = [np.array(W, dtype=np.float64).reshape(o, i)
               for W, i, o in zip(obj["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=np.float64).reshape(o)
              for b, o in zip(obj["biases"], dims[1:])]
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise ValueError("checkpoint layer count does not match layer_dims")
    activation = obj["activation"]
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    net = Network(dims, weights, biases, activation, int(obj.get("seed", 0)))
    return net, dict(obj.get("train_meta", {}))


def save_checkpoint(path, net: Network, train_meta: Optional[dict] = None) -> None:
    # float repr is the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(network_to_dict(net, train_meta)))


def load_checkpoint(path) -> tuple[Network, dict]:
    return network_from_dict(json.loads(Path(path).read_text()))
