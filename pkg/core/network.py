"""
Activation-learning networks: input layout, model assembly and training loops.

Training without feedback applies the local competitive rule to every layer
from its own (input, net input) pair. Training with feedback learns the
correctly labelled input and unlearns the strongest wrongly labelled one,
gated by the activation gap between them.
"""

import copy
import logging
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from core.exceptions import DivergenceError, LayoutMismatchError, NonFiniteError, ShapeError
from core.layers import (
    Activation,
    Connectivity,
    Grid,
    LayerState,
    apply_update,
    forward,
    forward_trace,
)
from core.layers import output_activation as stack_activation
from core.numerics import ACCUMULATOR, FLOAT, make_rng
from core.rule import UpdateBatch, competitive_delta

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1e-3
DEFAULT_BATCH_SIZE = 100
DEFAULT_INIT_SIGMA = 0.01


class BlockRole(str, Enum):
    DATA = "data"
    LABEL = "label"


class NormPolicy(str, Enum):
    PER_BLOCK = "per_block_unit_norm"
    JOINT = "joint_unit_norm"


class TrainingMode(str, Enum):
    SIMULTANEOUS = "simultaneous"
    LAYERWISE = "layerwise"


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple
    role: BlockRole

    @property
    def size(self):
        return int(np.prod(self.shape))


def _normalize_rows(rows):
    norms = np.linalg.norm(rows.astype(ACCUMULATOR), axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return (rows / safe).astype(FLOAT)


@dataclass(frozen=True)
class BlockLayout:
    blocks: tuple

    def __post_init__(self):
        roles = [b.role for b in self.blocks]
        if len(set(roles)) != len(roles):
            raise LayoutMismatchError("each block role may appear at most once.")
        if not roles or roles[0] is not BlockRole.DATA:
            raise LayoutMismatchError("the data block must come first.")

    @classmethod
    def of(cls, data_shape, label_shape=None):
        blocks = [Block("data", tuple(data_shape), BlockRole.DATA)]
        if label_shape is not None:
            blocks.append(Block("label", tuple(label_shape), BlockRole.LABEL))
        return cls(tuple(blocks))

    @classmethod
    def mnist(cls):
        return cls.of((28, 28, 1), (10, 28))

    @classmethod
    def cifar10(cls, side=32):
        return cls.of((side, side, 3), (10, 10))

    @property
    def size(self):
        return sum(b.size for b in self.blocks)

    @property
    def data_block(self):
        return self.blocks[0]

    @property
    def label_block(self):
        for block in self.blocks:
            if block.role is BlockRole.LABEL:
                return block
        return None

    def slice_of(self, role):
        start = 0
        for block in self.blocks:
            if block.role is BlockRole(role):
                return slice(start, start + block.size)
            start += block.size
        raise LayoutMismatchError(f"layout has no {role} block.")

    def compose(self, data, label=None, policy=NormPolicy.PER_BLOCK):
        """
        Concatenate data and label blocks into normalized network inputs.

        Accepts a single sample or rows of samples. Zero blocks stay zero.
        """
        data = np.asarray(data, dtype=FLOAT)
        single = data.ndim == 1
        data = data.reshape(1, -1) if single else data.reshape(data.shape[0], -1)
        if data.shape[1] != self.data_block.size:
            raise LayoutMismatchError(
                f"data block has {data.shape[1]} values, layout expects {self.data_block.size}."
            )
        parts = [data]
        label_block = self.label_block
        if label_block is not None:
            if label is None:
                label = np.zeros((data.shape[0], label_block.size), dtype=FLOAT)
            label = np.asarray(label, dtype=FLOAT).reshape(data.shape[0], -1)
            if label.shape[1] != label_block.size:
                raise LayoutMismatchError(
                    f"label block has {label.shape[1]} values, layout expects {label_block.size}."
                )
            parts.append(label)
        elif label is not None:
            raise LayoutMismatchError("layout has no label block.")

        if NormPolicy(policy) is NormPolicy.PER_BLOCK:
            rows = np.hstack([_normalize_rows(p) for p in parts])
        else:
            rows = _normalize_rows(np.hstack(parts))
        return rows[0] if single else rows

    def descriptor(self):
        return [{"name": b.name, "shape": list(b.shape), "role": b.role.value} for b in self.blocks]

    @classmethod
    def from_descriptor(cls, data):
        return cls(tuple(Block(d["name"], tuple(d["shape"]), BlockRole(d["role"])) for d in data))


@dataclass
class NetworkModel:
    layers: list
    layout: BlockLayout
    norm_policy: NormPolicy = NormPolicy.PER_BLOCK

    def __post_init__(self):
        self.norm_policy = NormPolicy(self.norm_policy)
        if not self.layers:
            raise ShapeError("a network needs at least one layer.")
        if self.layers[0].fan_in != self.layout.size:
            raise LayoutMismatchError(
                f"first layer takes {self.layers[0].fan_in} inputs, layout provides {self.layout.size}."
            )
        for below, above in zip(self.layers, self.layers[1:]):
            if below.fan_out != above.fan_in:
                raise ShapeError(f"layer dims do not chain: {below.fan_out} -> {above.fan_in}.")

    @classmethod
    def fully_connected(cls, layout, widths, activation, rng, sigma=DEFAULT_INIT_SIGMA,
                        norm_policy=NormPolicy.PER_BLOCK):
        if isinstance(activation, (str, Activation)):
            activation = [activation] * len(widths)
        layers = []
        fan_in = layout.size
        for width, act in zip(widths, activation):
            layers.append(LayerState.initialize(Connectivity.full(fan_in, width), act, rng, sigma))
            fan_in = width
        return cls(layers=layers, layout=layout, norm_policy=norm_policy)

    @classmethod
    def locally_connected(cls, layout, units, field_size, rng, output_width=None,
                          activation=Activation.STD_ABS, sigma=DEFAULT_INIT_SIGMA,
                          norm_policy=NormPolicy.PER_BLOCK, full_top=True):
        """
        Local layers, the label broadcast into the first, optionally topped by a
        full layer of ``output_width`` units (the data size by default).
        """
        shape = layout.data_block.shape
        if len(shape) != 3:
            raise LayoutMismatchError("locally connected networks need an (H, W, C) data block.")
        grid = Grid(*shape)
        label = layout.label_block
        broadcast = label.size if label is not None else 0
        layers = []
        for index, count in enumerate(units):
            conn = Connectivity.local(grid, count, field_size, broadcast=broadcast if index == 0 else 0)
            layers.append(LayerState.initialize(conn, activation, rng, sigma))
            grid = conn.output_grid
        if not full_top:
            return cls(layers=layers, layout=layout, norm_policy=norm_policy)
        width = output_width or layout.data_block.size
        layers.append(LayerState.initialize(Connectivity.full(grid.size, width), activation, rng, sigma))
        return cls(layers=layers, layout=layout, norm_policy=norm_policy)

    @property
    def fan_in(self):
        return self.layout.size

    def encode(self, sample):
        """Network input for an encoded sample (data/label blocks) or a ready vector."""
        if isinstance(sample, np.ndarray):
            if sample.shape[-1] != self.fan_in:
                raise LayoutMismatchError(
                    f"input has dimension {sample.shape[-1]}, model expects {self.fan_in}."
                )
            return sample
        return self.layout.compose(sample.data, getattr(sample, "label", None), self.norm_policy)

    def compose(self, data, label=None):
        return self.layout.compose(data, label, self.norm_policy)

    def output_activation(self, x):
        return stack_activation(self.layers, x)

    def trace(self, x):
        return forward_trace(self.layers, x)

    def copy(self):
        return copy.deepcopy(self)


def output_activation(model, sample):
    """Output activation ``||y_top||^2`` of one sample and its full forward trace."""
    trace = model.trace(model.encode(sample))
    return float(trace.output_activation), trace


def likelihood_score(model, sample, temperature=1.0):
    """Unnormalized log-likelihood ``a * ||y||^2``; monotone in the output activation."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}.")
    activation, _ = output_activation(model, sample)
    return temperature * activation


# ------------------ training configuration ------------------

@dataclass(frozen=True)
class FeedbackConfig:
    unlearning: float = 0.9
    # gamma = clip(b - k g, 0, 1): full rate on errors, none once the gap exceeds b / k.
    gate_slope: float = 5.0
    gate_intercept: float = 1.0
    # Below this normalized positive activation nothing is unlearned.
    start_threshold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.unlearning <= 1.0:
            raise ValueError(f"unlearning factor must lie in [0, 1], got {self.unlearning}.")
        if self.gate_slope < 0:
            raise ValueError(f"gate slope must be non-negative, got {self.gate_slope}.")

    @classmethod
    def mnist(cls):
        return cls(unlearning=0.9, gate_slope=5.0, gate_intercept=1.0)

    @classmethod
    def cifar10(cls):
        return cls(unlearning=0.7, gate_slope=5.0, gate_intercept=1.0, start_threshold=0.5)

    def gate(self, gap):
        """Truncated linear ``min(max(b - k g, 0), 1)``, non-increasing in the gap ``g``."""
        return np.clip(self.gate_intercept - self.gate_slope * np.asarray(gap, dtype=ACCUMULATOR), 0.0, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = DEFAULT_ETA
    epochs: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE
    mode: TrainingMode = TrainingMode.SIMULTANEOUS
    seed: int = 0
    feedback: FeedbackConfig | None = None
    eta_final: float | None = None
    shuffle: bool = True

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}.")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}.")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}.")
        object.__setattr__(self, "mode", TrainingMode(self.mode))

    def eta_at(self, epoch):
        if self.eta_final is None or self.epochs <= 1:
            return self.eta
        fraction = epoch / (self.epochs - 1)
        return self.eta + (self.eta_final - self.eta) * fraction


@dataclass
class EpochLog:
    epoch: int
    mean_activation: float
    norm_activation: float
    seconds: float
    layer: int | None = None
    train_accuracy: float | None = None
    mean_gap: float | None = None


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    stopped_early: bool = False

    def append(self, entry):
        self.epochs.append(entry)
        logger.info(
            "epoch %d%s: mean activation %.5f (normalized %.5f) in %.2fs",
            entry.epoch,
            "" if entry.layer is None else f" layer {entry.layer}",
            entry.mean_activation,
            entry.norm_activation,
            entry.seconds,
        )

    @property
    def activations(self):
        return [e.norm_activation for e in self.epochs]


# ------------------ training loops ------------------

def _batches(count, cfg, rng):
    order = rng.permutation(count) if cfg.shuffle else np.arange(count)
    for start in range(0, count, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def _checked_delta(batch, layer, batch_index, layer_index):
    try:
        return competitive_delta(batch, layer.w)
    except NonFiniteError as exc:
        raise DivergenceError(batch_index, layer_index) from exc


def _apply(layers, deltas, batch_index):
    for index, (layer, delta) in enumerate(zip(layers, deltas)):
        if not apply_update(layer, delta):
            logger.error("Update of layer %d at batch %d is not finite; stopping", index, batch_index)
            raise DivergenceError(batch_index, index)


def _strength(x):
    return np.sum(np.asarray(x, dtype=ACCUMULATOR) ** 2, axis=1)


def _check_inputs(model, inputs, augmented=False):
    inputs = np.asarray(inputs, dtype=FLOAT)
    # Augmentation may change the row size; compose() checks the result instead.
    expected = inputs.shape[1] if augmented and inputs.ndim == 2 else model.fan_in
    if inputs.ndim != 2 or inputs.shape[1] != expected:
        raise LayoutMismatchError(
            f"training inputs have shape {inputs.shape}, model expects (N, {model.fan_in})."
        )
    return inputs


def train_unsupervised(model, inputs, cfg, augment=None, on_epoch=None):
    """
    Train every layer with the local competitive rule, no labels involved.

    ``inputs`` are already-normalized network inputs, one per row. ``augment``
    optionally transforms each batch ``(rows, rng) -> rows``. ``on_epoch``
    receives each :class:`EpochLog`; returning True stops training.
    """
    inputs = _check_inputs(model, inputs, augmented=augment is not None)
    rng = make_rng(cfg.seed)
    log = TrainingLog()
    if cfg.mode is TrainingMode.LAYERWISE:
        _train_layerwise(model, inputs, cfg, rng, log, augment, on_epoch)
    else:
        _train_simultaneous(model, inputs, cfg, rng, log, augment, on_epoch)
    return log


def _train_simultaneous(model, inputs, cfg, rng, log, augment, on_epoch):
    batch_index = 0
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        eta = cfg.eta_at(epoch)
        activation_sum = strength_sum = 0.0
        for idx in _batches(len(inputs), cfg, rng):
            x = inputs[idx]
            if augment is not None:
                x = augment(x, rng)
            current = x
            deltas = []
            for index, layer in enumerate(model.layers):
                y, fy = forward(layer, current)
                deltas.append(_checked_delta(UpdateBatch(current, y, eta), layer, batch_index, index))
                current = fy
            activation_sum += float(np.sum(_strength(y)))
            strength_sum += float(np.sum(_strength(x)))
            _apply(model.layers, deltas, batch_index)
            batch_index += 1
        entry = EpochLog(
            epoch=epoch,
            mean_activation=activation_sum / len(inputs),
            norm_activation=activation_sum / strength_sum if strength_sum else 0.0,
            seconds=time.perf_counter() - started,
        )
        log.append(entry)
        if on_epoch is not None and on_epoch(entry):
            log.stopped_early = True
            return


def _train_layerwise(model, inputs, cfg, rng, log, augment, on_epoch):
    batch_index = 0
    for target, layer in enumerate(model.layers):
        frozen = model.layers[:target]
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            eta = cfg.eta_at(epoch)
            activation_sum = strength_sum = 0.0
            for idx in _batches(len(inputs), cfg, rng):
                x = inputs[idx]
                if augment is not None:
                    x = augment(x, rng)
                current = x
                for below in frozen:
                    _, current = forward(below, current)
                y, _ = forward(layer, current)
                delta = _checked_delta(UpdateBatch(current, y, eta), layer, batch_index, target)
                activation_sum += float(np.sum(_strength(y)))
                strength_sum += float(np.sum(_strength(current)))
                _apply([layer], [delta], batch_index)
                batch_index += 1
            entry = EpochLog(
                epoch=epoch,
                mean_activation=activation_sum / len(inputs),
                norm_activation=activation_sum / strength_sum if strength_sum else 0.0,
                seconds=time.perf_counter() - started,
                layer=target,
            )
            log.append(entry)
            if on_epoch is not None and on_epoch(entry):
                log.stopped_early = True
                return


def class_activations(model, data, codec):
    """Output activation of every (data row, class) pairing, shape ``(N, classes)``."""
    data = np.asarray(data, dtype=FLOAT).reshape(len(data), -1)
    classes = codec.classes
    rows = np.repeat(data, classes, axis=0)
    labels = np.tile(codec.blocks(), (len(data), 1))
    return model.output_activation(model.compose(rows, labels)).reshape(len(data), classes)


def train_with_feedback(model, data, labels, cfg, codec, augment=None, on_epoch=None):
    """
    Train on labelled data with accuracy feedback.

    For every sample the positive input pairs the data with its true label and
    the negative input with the wrong label of highest output activation. The
    batch update of each layer is the mean of ``gamma * (dw+ - lambda * dw-)``
    where ``gamma`` gates on the activation gap of the pre-update model.
    ``augment`` here transforms data rows ``(rows, rng) -> rows``.
    """
    if cfg.feedback is None:
        raise ValueError("train_with_feedback needs a FeedbackConfig.")
    if cfg.mode is not TrainingMode.SIMULTANEOUS:
        raise ValueError("feedback training updates all layers together; use simultaneous mode.")
    feedback = cfg.feedback
    data = np.asarray(data, dtype=FLOAT).reshape(len(data), -1)
    labels = np.asarray(labels, dtype=np.int64)
    if len(data) != len(labels):
        raise ShapeError(f"{len(data)} data rows but {len(labels)} labels.")
    if augment is None and data.shape[1] != model.layout.data_block.size:
        raise LayoutMismatchError(
            f"data rows have {data.shape[1]} values, layout expects {model.layout.data_block.size}."
        )
    label_rows = codec.blocks()
    rng = make_rng(cfg.seed)
    log = TrainingLog()
    batch_index = 0

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        eta = cfg.eta_at(epoch)
        activation_sum = strength_sum = gap_sum = 0.0
        correct = 0
        for idx in _batches(len(data), cfg, rng):
            d = data[idx]
            if augment is not None:
                d = augment(d, rng)
            truth = labels[idx]
            count = len(idx)
            acts = class_activations(model, d, codec)
            correct += int(np.sum(np.argmax(acts, axis=1) == truth))

            wrong = acts.astype(ACCUMULATOR, copy=True)
            wrong[np.arange(count), truth] = -np.inf
            negative = np.argmax(wrong, axis=1)
            positive_act = acts[np.arange(count), truth].astype(ACCUMULATOR)
            gap = positive_act - acts[np.arange(count), negative]
            gamma = feedback.gate(gap)

            x_pos = model.compose(d, label_rows[truth])
            x_neg = model.compose(d, label_rows[negative])
            strength = _strength(x_pos)
            unlearn = np.full(count, feedback.unlearning, dtype=ACCUMULATOR)
            if feedback.start_threshold > 0:
                unlearn[positive_act / strength < feedback.start_threshold] = 0.0

            pos, neg = x_pos, x_neg
            deltas = []
            for index, layer in enumerate(model.layers):
                y_pos, f_pos = forward(layer, pos)
                y_neg, f_neg = forward(layer, neg)
                learn = _checked_delta(
                    UpdateBatch(pos, y_pos, eta, weights=gamma), layer, batch_index, index
                )
                forget = _checked_delta(
                    UpdateBatch(neg, y_neg, eta, weights=gamma * unlearn), layer, batch_index, index
                )
                deltas.append(learn - forget)
                pos, neg = f_pos, f_neg
            activation_sum += float(np.sum(positive_act))
            strength_sum += float(np.sum(strength))
            gap_sum += float(np.sum(gap))
            _apply(model.layers, deltas, batch_index)
            batch_index += 1

        entry = EpochLog(
            epoch=epoch,
            mean_activation=activation_sum / len(data),
            norm_activation=activation_sum / strength_sum if strength_sum else 0.0,
            seconds=time.perf_counter() - started,
            train_accuracy=correct / len(data),
            mean_gap=gap_sum / len(data),
        )
        log.append(entry)
        if on_epoch is not None and on_epoch(entry):
            log.stopped_early = True
            break
    return log
