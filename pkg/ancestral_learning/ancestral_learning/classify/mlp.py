"""
Fully-connected binary classifier: ReLU hidden layers, a single sigmoid output unit.

The network is trained on mean binary cross-entropy with mini-batch Adam (or plain SGD).
Weights are initialized Glorot-uniform and biases at zero, so a seed fully determines
the fitted model.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ancestral_learning import json_logging
from ancestral_learning.classify.training import TrainingSet
from ancestral_learning.errors import DomainError

logger = json_logging.getLogger(__name__)
logger.addHandler(json_logging.NullHandler())

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (256, 256, 128, 64)
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 256
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(width) for width in self.hidden))
        if any(width < 1 for width in self.hidden):
            raise DomainError(f"hidden layer widths must be positive, got {self.hidden}")
        if self.learning_rate <= 0.0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise DomainError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")

    def layer_sizes(self, input_dim: int) -> Tuple[int, ...]:
        return (input_dim,) + self.hidden + (1,)


@dataclass(frozen=True)
class MlpModel:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    config: MlpConfig = field(default_factory=MlpConfig)
    loss_trace: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("need one bias vector per weight matrix")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DomainError(f"inconsistent layer shapes {w.shape} and {b.shape}")
        for before, after in zip(self.weights, self.weights[1:]):
            if before.shape[1] != after.shape[0]:
                raise DomainError("consecutive layers do not connect")
        if self.weights[-1].shape[1] != 1:
            raise DomainError("the output layer must have a single unit")

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def parameter_count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        """Return the output logits (before the sigmoid), one per row."""
        return _forward(self.weights, self.biases, np.asarray(features, dtype=np.float64))[0]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(features))


def init_mlp(input_dim: int, cfg: MlpConfig, seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    if input_dim < 1:
        raise DomainError(f"input dimension must be positive, got {input_dim}")
    rng = np.random.default_rng(seed)
    sizes = cfg.layer_sizes(input_dim)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), cfg)


def _forward(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray
) -> Tuple[np.ndarray, List[np.ndarray]]:
    activations = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    logits = (h @ weights[-1] + biases[-1]).reshape(-1)
    return logits, activations


def mlp_loss_and_gradients(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    features: np.ndarray,
    labels: np.ndarray,
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Mean binary cross-entropy of the batch and its gradients by back-propagation."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    logits, activations = _forward(weights, biases, x)
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    delta = ((expit(logits) - y) / y.size).reshape(-1, 1)
    grad_w: List[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (activations[layer] > 0.0)
    return loss, grad_w, grad_b


class _Adam:
    def __init__(self, params: Sequence[np.ndarray], cfg: MlpConfig) -> None:
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        for index, grad in enumerate(grads):
            self.m[index] = cfg.beta1 * self.m[index] + (1.0 - cfg.beta1) * grad
            self.v[index] = cfg.beta2 * self.v[index] + (1.0 - cfg.beta2) * grad * grad
            m_hat = self.m[index] / correction1
            v_hat = self.v[index] / correction2
            params[index] = params[index] - cfg.learning_rate * m_hat / (
                np.sqrt(v_hat) + cfg.epsilon
            )


class _Sgd:
    def __init__(self, params: Sequence[np.ndarray], cfg: MlpConfig) -> None:
        self.cfg = cfg

    def step(self, params: List[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        for index, grad in enumerate(grads):
            params[index] = params[index] - self.cfg.learning_rate * grad


def fit_mlp(train: TrainingSet, cfg: MlpConfig = MlpConfig(), seed: int = 0) -> MlpModel:
    """Train from a seeded initialization; with zero epochs the initial network is returned."""
    train.require_both_classes()
    init_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(2)
    model = init_mlp(train.dim, cfg, int(init_seed.generate_state(1)[0]))
    if cfg.epochs == 0:
        return model

    n_layers = len(model.weights)
    params = list(model.weights) + list(model.biases)
    optimizer = _Adam(params, cfg) if cfg.optimizer == "adam" else _Sgd(params, cfg)
    rng = np.random.default_rng(shuffle_seed)
    x, y = train.features, train.labels
    loss_trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train.size)
        total = 0.0
        for start in range(0, train.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grad_w, grad_b = mlp_loss_and_gradients(
                params[:n_layers], params[n_layers:], x[batch], y[batch]
            )
            optimizer.step(params, grad_w + grad_b)
            total += loss * batch.size
        loss_trace.append(total / train.size)
        logger.debug(
            f"Finished epoch {epoch + 1}/{cfg.epochs}", extra={"train_loss": loss_trace[-1]}
        )
    return MlpModel(tuple(params[:n_layers]), tuple(params[n_layers:]), cfg, tuple(loss_trace))
