"""Probabilistic binary classifiers trained from scratch.

Both the logistic model and the small feed-forward network are trained by
full-batch gradient descent on the mean binary cross-entropy (plus an
optional L2 penalty on the weights).  Inputs are min-max scaled to [0,1] by
the training ranges; the scaling is stored inside the model so predictions
see the same mapping.  Training is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DataError

_Z_CLIP = 36.0  # keeps sigmoid strictly inside (0, 1) in float64


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    learning_rate: float = 0.1
    l2_penalty: float = 0.0
    tolerance: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.learning_rate <= 0 or self.l2_penalty < 0 \
                or self.tolerance < 0:
            raise DataError("invalid training configuration")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_Z_CLIP, _Z_CLIP)))


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    # mean(log(1 + e^z) - y*z), computed from logits for stability
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass(frozen=True)
class Scaling:
    lo: np.ndarray
    span: np.ndarray  # zero-range columns stored with span 1

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaling":
        lo = X.min(axis=0)
        span = X.max(axis=0) - lo
        return cls(lo, np.where(span <= 0, 1.0, span))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.lo) / self.span


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    scaling: Scaling


@dataclass(frozen=True)
class NetworkModel:
    layer_sizes: tuple[int, ...]  # [d, hidden..., 1]
    weights: tuple[np.ndarray, ...]  # per layer, shape (n_out, n_in)
    biases: tuple[np.ndarray, ...]  # per layer, shape (n_out,)
    scaling: Scaling
    hidden_activation: str = "tanh"


def _check_training_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if y.shape != (X.shape[0],):
        raise DataError("y length must match the number of rows of X")
    if np.isnan(X).any():
        raise DataError("X contains missing values; impute before training")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("y must be binary")
    if (y == y[0]).all():
        raise DataError("training labels are all identical")
    return X, y


def _init_uniform(rng, n_out: int, n_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(n_in, 1))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


def logistic_loss_grad(weights, bias, X, y, l2_penalty=0.0):
    """Mean BCE + l2*||w||^2 and its gradients; the exact training objective."""
    with np.errstate(over="ignore"):  # divergence is caught via the finite check
        z = X @ weights + bias
        loss = _bce(z, y) + l2_penalty * float(weights @ weights)
        resid = (sigmoid(z) - y) / y.size
        grad_w = X.T @ resid + 2.0 * l2_penalty * weights
        grad_b = float(resid.sum())
    return loss, grad_w, grad_b


def fit_logistic(X, y, config: TrainConfig = TrainConfig()) -> LogisticModel:
    X, y = _check_training_inputs(X, y)
    scaling = Scaling.fit(X)
    Xs = scaling.apply(X)
    rng = np.random.default_rng(config.seed)
    w = _init_uniform(rng, 1, X.shape[1])[0]
    b = 0.0
    prev = np.inf
    for epoch in range(config.max_epochs):
        loss, gw, gb = logistic_loss_grad(w, b, Xs, y, config.l2_penalty)
        if not np.isfinite(loss):
            raise ConvergenceError(f"logistic training diverged at epoch {epoch}")
        if abs(prev - loss) < config.tolerance:
            break
        prev = loss
        w = w - config.learning_rate * gw
        b = b - config.learning_rate * gb
    return LogisticModel(w, b, scaling)


def network_forward(weights, biases, Xs: np.ndarray) -> np.ndarray:
    """Logits for scaled inputs: tanh hidden layers, linear output unit."""
    a = Xs
    for W, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(a @ W.T + b)
    return (a @ weights[-1].T + biases[-1]).ravel()


def network_loss_grad(weights, biases, Xs, y, l2_penalty=0.0):
    """Loss and per-layer gradients via backpropagation."""
    activations = [Xs]
    for W, b in zip(weights[:-1], biases[:-1]):
        activations.append(np.tanh(activations[-1] @ W.T + b))
    z = (activations[-1] @ weights[-1].T + biases[-1]).ravel()
    loss = _bce(z, y) + l2_penalty * sum(float((W * W).sum()) for W in weights)

    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    delta = ((sigmoid(z) - y) / y.size)[:, None]  # d loss / d z
    for layer in range(len(weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ activations[layer] + 2.0 * l2_penalty * weights[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer]) * (1.0 - activations[layer] ** 2)
    return loss, grads_w, grads_b


def fit_network(X, y, hidden, config: TrainConfig = TrainConfig()) -> NetworkModel:
    X, y = _check_training_inputs(X, y)
    hidden = tuple(int(h) for h in hidden)
    if any(h < 1 for h in hidden):
        raise DataError("hidden layer sizes must be at least 1")
    sizes = (X.shape[1],) + hidden + (1,)
    scaling = Scaling.fit(X)
    Xs = scaling.apply(X)
    rng = np.random.default_rng(config.seed)
    weights = [_init_uniform(rng, n_out, n_in) for n_in, n_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    prev = np.inf
    for epoch in range(config.max_epochs):
        loss, gw, gb = network_loss_grad(weights, biases, Xs, y, config.l2_penalty)
        if not np.isfinite(loss):
            raise ConvergenceError(f"network training diverged at epoch {epoch}")
        if abs(prev - loss) < config.tolerance:
            break
        prev = loss
        weights = [W - config.learning_rate * g for W, g in zip(weights, gw)]
        biases = [b - config.learning_rate * g for b, g in zip(biases, gb)]
    return NetworkModel(sizes, tuple(weights), tuple(biases), scaling)


def predict_proba(model, x):
    """Probability of the positive class; accepts a vector or a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    d = model.scaling.lo.size
    if X.shape[1] != d:
        raise DataError(f"expected {d} features, got {X.shape[1]}")
    Xs = model.scaling.apply(X)
    if isinstance(model, LogisticModel):
        z = Xs @ model.weights + model.bias
    else:
        z = network_forward(model.weights, model.biases, Xs)
    p = sigmoid(z)
    return float(p[0]) if single else p
