"""Linear softmax readout trained by plain mini-batch gradient descent."""

import logging
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import DivergenceError
from core.numerics import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReadoutConfig:
    step_size: float = 0.1
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"invalid readout config {self}.")


@dataclass
class LinearReadout:
    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, features, classes):
        return cls(weights=np.zeros((features, classes)), bias=np.zeros(classes))

    def logits(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def probabilities(self, x):
        return softmax(self.logits(x))

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def error_rate(self, x, labels):
        return float(np.mean(self.predict(x) != np.asarray(labels)))


@dataclass
class ReadoutResult:
    classifier: LinearReadout
    train_error: float
    test_error: float | None = None
    losses: list = field(default_factory=list)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def cross_entropy(probabilities, labels):
    picked = probabilities[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))


def train_linear_readout(features, labels, cfg=None, classes=None, test=None):
    """
    Fit ``softmax(x W + b)`` to ``labels`` by cross-entropy gradient descent.

    ``test`` is an optional ``(features, labels)`` pair evaluated at the end.
    Raises :class:`DivergenceError` when the loss stops being finite.
    """
    cfg = cfg or ReadoutConfig()
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    y = np.asarray(labels, dtype=np.int64)
    classes = classes or int(y.max()) + 1
    readout = LinearReadout.zeros(x.shape[1], classes)
    onehot = np.eye(classes)[y]
    rng = make_rng(cfg.seed)
    losses = []
    batch_index = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                residual = softmax(readout.logits(x[idx])) - onehot[idx]
                readout.weights -= cfg.step_size * (x[idx].T @ residual) / len(idx)
                readout.bias -= cfg.step_size * residual.mean(axis=0)
            if not (np.all(np.isfinite(readout.weights)) and np.all(np.isfinite(readout.bias))):
                raise DivergenceError(batch_index)
            batch_index += 1
        with np.errstate(over="ignore", invalid="ignore"):
            loss = cross_entropy(readout.probabilities(x), y)
        if not np.isfinite(loss):
            raise DivergenceError(batch_index)
        losses.append(loss)
        logger.debug("readout epoch %d: loss %.5f", epoch, loss)

    result = ReadoutResult(classifier=readout, train_error=readout.error_rate(x, y), losses=losses)
    if test is not None:
        test_x, test_y = test
        result.test_error = readout.error_rate(np.asarray(test_x).reshape(len(test_x), -1), test_y)
    logger.info(
        "Linear readout on %d features: train error %.4f, test error %s",
        x.shape[1], result.train_error,
        "n/a" if result.test_error is None else f"{result.test_error:.4f}",
    )
    return result
