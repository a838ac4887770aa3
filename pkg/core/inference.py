"""
Inference on a trained activation-learning network.

Every procedure maximizes the output activation over the unknown part of the
input: classification enumerates the label block, generation and completion
run gradient ascent on the data block.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import InferenceAbortedError, LayoutMismatchError, ShapeError
from core.layers import forward, input_gradient
from core.network import NormPolicy, class_activations, output_activation
from core.numerics import ACCUMULATOR, FLOAT, make_rng
from data.dataset import EncodedSample

logger = logging.getLogger(__name__)

DEGENERATE_ACTIVATION = 1e-9
MAX_HALVINGS = 30
PREDICT_BATCH = 500


@dataclass(frozen=True)
class GenerationConfig:
    l1_beta: float = 0.003
    noise_std: float = 0.03
    steps: int = 500
    step_size: float = 0.05
    penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("l1_beta", "noise_std", "steps", "step_size", "penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}.")


@dataclass(frozen=True)
class InferenceTask:
    """
    Which data entries are given and which are to be inferred.

    ``values`` spans the whole data block; entries outside ``known`` are ignored.
    """

    values: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=FLOAT).ravel()
        known = np.asarray(self.known, dtype=bool).ravel()
        if values.shape != known.shape:
            raise ShapeError(f"values {values.shape} and known mask {known.shape} differ.")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "known", known)

    @classmethod
    def generation(cls, size):
        return cls(values=np.zeros(size, dtype=FLOAT), known=np.zeros(size, dtype=bool))

    @classmethod
    def masked(cls, image, visible):
        return cls(values=np.asarray(image).ravel(), known=np.asarray(visible).ravel())

    @property
    def unknown(self):
        return ~self.known

    @property
    def visible_values(self):
        return np.where(self.known, self.values, 0.0).astype(FLOAT)


@dataclass
class Classification:
    label: int
    activations: np.ndarray
    degenerate: bool = False


@dataclass
class AscentResult:
    data: np.ndarray
    objectives: list = field(default_factory=list)
    steps: int = 0


@dataclass
class GenerationResult(AscentResult):
    class_id: int | None = None


@dataclass
class CompletionResult(AscentResult):
    label: int = 0
    step_one: Classification | None = None
    # No visible intensity: the label is arbitrary and the data was generated.
    degenerate: bool = False


# ------------------ classification ------------------

def classify(model, data, codec):
    """
    Argmax of the output activation over every label encoding.

    Ties go to the smallest class index. A model whose activations are all
    ``<= 1e-9`` is flagged as degenerate rather than raising.
    """
    data = np.asarray(data, dtype=FLOAT).ravel()
    activations = class_activations(model, data[None], codec)[0].astype(ACCUMULATOR)
    degenerate = bool(np.all(activations <= DEGENERATE_ACTIVATION))
    if degenerate:
        logger.warning("All class activations are below %.0e; model looks untrained", DEGENERATE_ACTIVATION)
    return Classification(label=int(np.argmax(activations)), activations=activations, degenerate=degenerate)


def predict(model, rows, codec, batch_size=PREDICT_BATCH):
    """Labels and ``(N, classes)`` activations for rows of data blocks."""
    rows = np.asarray(rows, dtype=FLOAT).reshape(len(rows), -1)
    chunks = [class_activations(model, rows[i:i + batch_size], codec) for i in range(0, len(rows), batch_size)]
    activations = np.vstack(chunks) if chunks else np.zeros((0, codec.classes))
    return np.argmax(activations, axis=1), activations


def error_rate(model, rows, labels, codec):
    predicted, _ = predict(model, rows, codec)
    return float(np.mean(predicted != np.asarray(labels)))


# ------------------ gradient ascent ------------------

def _ascend(objective, gradient, start, step_size, steps):
    """
    Fixed-step gradient ascent with backtracking halving.

    A step is accepted only if the objective does not decrease; when no
    halving succeeds the iterate has converged and ascent stops.
    """
    u = np.asarray(start, dtype=ACCUMULATOR)
    value = objective(u)
    if not np.isfinite(value):
        raise InferenceAbortedError(0)
    history = [value]
    taken = 0
    for step in range(steps):
        grad = gradient(u)
        if not np.all(np.isfinite(grad)):
            raise InferenceAbortedError(step, "non-finite gradient")
        rate = step_size
        for _ in range(MAX_HALVINGS):
            candidate = u + rate * grad
            candidate_value = objective(candidate)
            if not np.isfinite(candidate_value):
                raise InferenceAbortedError(step)
            if candidate_value >= value:
                break
            rate *= 0.5
        else:
            break
        u, value = candidate, candidate_value
        history.append(value)
        taken += 1
    return u, history, taken


def _top_net_input(layers, x):
    current = x
    y = None
    for layer in layers:
        y, current = forward(layer, current)
    return np.asarray(y, dtype=ACCUMULATOR)


def _label_block(model, class_id, codec):
    label = model.layout.label_block
    if class_id is None:
        if label is not None:
            raise LayoutMismatchError("the model has a label block; pass a class.")
        return None
    if label is None:
        raise LayoutMismatchError("the model has no label block to condition on.")
    if codec is None:
        raise ValueError("conditioning on a class needs a label codec.")
    return codec.encode(int(class_id)).astype(ACCUMULATOR)


def _normalized_pullback(vector, grad):
    """Gradient w.r.t. ``v`` of a function of ``v / ||v||`` given its gradient ``grad``."""
    norm = np.linalg.norm(vector)
    unit = vector / norm
    return (grad - unit * np.dot(unit, grad)) / norm


def generate(model, class_id, cfg=None, codec=None):
    """
    Generate a data block for ``class_id`` by gradient ascent from a uniform
    random start.

    Maximizes ``sum_i (1 + d_i) y_i^2 - beta ||z||_1 - rho (||z||^2 - 1)^2``
    where the noise ``d`` is drawn once per call. The result has unit norm.
    """
    cfg = cfg or GenerationConfig()
    rng = make_rng(cfg.seed)
    size = model.layout.data_block.size
    label = _label_block(model, class_id, codec)
    z0 = rng.uniform(0.0, 1.0, size)
    z0 /= np.linalg.norm(z0)
    top = model.layers[-1].fan_out
    weights = np.ones(top, dtype=ACCUMULATOR)
    if cfg.noise_std > 0:
        weights = weights + rng.normal(0.0, cfg.noise_std, top)
    # With a joint norm policy a unit data block and unit label block share 1/sqrt(2).
    scale = 1.0 / np.sqrt(2.0) if model.norm_policy is NormPolicy.JOINT and label is not None else 1.0

    def network_input(z):
        parts = [z] if label is None else [z, label]
        return np.concatenate(parts) * scale

    def objective(z):
        y = _top_net_input(model.layers, network_input(z))
        sq = float(np.dot(z, z))
        return float(np.sum(weights * y ** 2)) - cfg.l1_beta * float(np.sum(np.abs(z))) \
            - cfg.penalty * (sq - 1.0) ** 2

    def gradient(z):
        full = input_gradient(model.layers, network_input(z), output_weights=weights)
        grad = scale * np.asarray(full[:size], dtype=ACCUMULATOR)
        grad -= cfg.l1_beta * np.sign(z)
        grad -= 4.0 * cfg.penalty * (float(np.dot(z, z)) - 1.0) * z
        return grad

    z, history, taken = _ascend(objective, gradient, z0, cfg.step_size, cfg.steps)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise InferenceAbortedError(taken, "generated block collapsed to zero")
    logger.debug("Generated class %s in %d steps, objective %.5f", class_id, taken, history[-1])
    return GenerationResult(
        data=(z / norm).astype(FLOAT), objectives=history, steps=taken, class_id=class_id
    )


def complete(model, task, codec, cfg=None):
    """
    Fill in the unknown entries of ``task``.

    Step one classifies the input with unknown entries at zero. Step two
    ascends ``||y||^2`` over the unknown entries with the whole data block
    renormalized jointly at every evaluation.
    """
    cfg = cfg or GenerationConfig()
    size = model.layout.data_block.size
    if task.values.shape != (size,):
        raise LayoutMismatchError(f"task covers {task.values.size} values, data block has {size}.")

    if not task.known.any():
        first = classify(model, np.zeros(size, dtype=FLOAT), codec)
        logger.warning("Completion with no visible entries; generating class %d", first.label)
        generated = generate(model, first.label, cfg, codec)
        return CompletionResult(
            data=generated.data,
            objectives=generated.objectives,
            steps=generated.steps,
            label=first.label,
            step_one=first,
            degenerate=True,
        )

    visible = task.visible_values.astype(ACCUMULATOR)
    first = classify(model, visible, codec)
    if task.known.all():
        return CompletionResult(data=task.values.copy(), label=first.label, step_one=first)

    label = codec.encode(first.label).astype(ACCUMULATOR)
    hidden = task.unknown
    joint = model.norm_policy is NormPolicy.JOINT

    def network_input(u):
        if joint:
            full = np.concatenate([u, label])
            return full / np.linalg.norm(full)
        return np.concatenate([u / np.linalg.norm(u), label])

    def objective(u):
        y = _top_net_input(model.layers, network_input(u))
        return float(np.sum(y ** 2))

    def gradient(u):
        x = network_input(u)
        g = np.asarray(input_gradient(model.layers, x), dtype=ACCUMULATOR)
        if joint:
            grad = _normalized_pullback(np.concatenate([u, label]), g)[:size]
        else:
            grad = _normalized_pullback(u, g[:size])
        return np.where(hidden, grad, 0.0)

    start = visible.copy()
    blank = not np.any(visible)
    if blank:
        # Visible entries are all zero; the hidden part starts from seeded noise as in generate().
        start[hidden] = make_rng(cfg.seed).uniform(0.0, 1.0, int(np.count_nonzero(hidden)))
    u, history, taken = _ascend(objective, gradient, start, cfg.step_size, cfg.steps)
    data = (u / np.linalg.norm(u)).astype(FLOAT)
    return CompletionResult(
        data=data, objectives=history, steps=taken, label=first.label, step_one=first, degenerate=blank
    )


# ------------------ anomaly detection ------------------

def anomaly_score(model, sample, codec=None):
    """
    Output activation of a sample; low means atypical.

    For a model with a label block and an unlabelled sample the best class
    activation is used.
    """
    encoded = isinstance(sample, EncodedSample)
    if model.layout.label_block is not None and (not encoded or sample.label is None):
        if codec is None:
            raise ValueError("scoring an unlabelled sample on a labelled model needs a codec.")
        data = sample.data if encoded else sample
        return float(np.max(class_activations(model, np.asarray(data)[None], codec)))
    activation, _ = output_activation(model, sample)
    return activation


def anomaly_scores(model, rows, codec=None, batch_size=PREDICT_BATCH):
    rows = np.asarray(rows, dtype=FLOAT).reshape(len(rows), -1)
    if model.layout.label_block is not None:
        _, activations = predict(model, rows, codec, batch_size)
        return activations.max(axis=1)
    inputs = model.compose(rows)
    return np.concatenate(
        [model.output_activation(inputs[i:i + batch_size]) for i in range(0, len(inputs), batch_size)]
    )


def is_anomalous(score, threshold):
    flags = np.asarray(score) < threshold
    return bool(flags) if flags.ndim == 0 else flags
