"""
Fully connected and locally connected layers with magnitude-preserving activations.

A locally connected layer is stored as a dense ``fan_in x fan_out`` matrix
plus a boolean mask; weights outside every unit's receptive field are kept at
exactly zero. Grids are flattened row-major as ``(row, column, channel)``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.exceptions import DegenerateInputError, ShapeError
from core.numerics import ACCUMULATOR, FLOAT, matmul

logger = logging.getLogger(__name__)

STD_EPSILON = 1e-12


class Activation(str, Enum):
    ABS = "abs"
    STD_ABS = "std_abs"
    SQUARE_NORM = "square_norm"
    IDENTITY = "identity"

    @property
    def preserves_magnitude(self):
        return self is not Activation.SQUARE_NORM


class ConnectivityKind(str, Enum):
    FULL = "full"
    LOCAL = "local"


@dataclass(frozen=True)
class Grid:
    height: int
    width: int
    channels: int

    @property
    def size(self):
        return self.height * self.width * self.channels

    def as_tuple(self):
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class Connectivity:
    kind: ConnectivityKind
    fan_in: int
    fan_out: int
    grid: Grid | None = None
    units: int = 0
    field_size: tuple = (1, 1)
    # Trailing inputs (e.g. the encoded label) wired to every unit of a local layer.
    broadcast: int = 0

    @classmethod
    def full(cls, fan_in, fan_out):
        return cls(kind=ConnectivityKind.FULL, fan_in=fan_in, fan_out=fan_out)

    @classmethod
    def local(cls, grid, units, field_size, broadcast=0):
        rh, rw = field_size
        if rh < 1 or rw < 1:
            raise ShapeError(f"receptive field must be at least 1x1, got {field_size}.")
        return cls(
            kind=ConnectivityKind.LOCAL,
            fan_in=grid.size + broadcast,
            fan_out=grid.height * grid.width * units,
            grid=grid,
            units=units,
            field_size=(rh, rw),
            broadcast=broadcast,
        )

    @property
    def is_local(self):
        return self.kind is ConnectivityKind.LOCAL

    @property
    def output_grid(self):
        if not self.is_local:
            return None
        return Grid(self.grid.height, self.grid.width, self.units)

    @property
    def offsets(self):
        rh, rw = self.field_size
        return (rh - 1) // 2, (rw - 1) // 2

    @cached_property
    def mask(self):
        if not self.is_local:
            return np.ones((self.fan_in, self.fan_out), dtype=bool)
        h, w, c = self.grid.as_tuple()
        rh, rw = self.field_size
        top, left = self.offsets
        in_row = np.repeat(np.arange(h, dtype=np.int32), w * c)
        in_col = np.tile(np.repeat(np.arange(w, dtype=np.int32), c), h)
        out_row = np.repeat(np.arange(h, dtype=np.int32), w * self.units)
        out_col = np.tile(np.repeat(np.arange(w, dtype=np.int32), self.units), h)
        dr = in_row[:, None] - out_row[None, :] + top
        dc = in_col[:, None] - out_col[None, :] + left
        grid_mask = (dr >= 0) & (dr < rh) & (dc >= 0) & (dc < rw)
        label_rows = np.ones((self.broadcast, self.fan_out), dtype=bool)
        return np.vstack([grid_mask, label_rows])

    def descriptor(self):
        data = {"kind": self.kind.value, "fan_in": self.fan_in, "fan_out": self.fan_out}
        if self.is_local:
            data.update(
                grid=list(self.grid.as_tuple()),
                units=self.units,
                field=list(self.field_size),
                broadcast=self.broadcast,
            )
        return data

    @classmethod
    def from_descriptor(cls, data):
        kind = ConnectivityKind(data["kind"])
        if kind is ConnectivityKind.FULL:
            return cls.full(int(data["fan_in"]), int(data["fan_out"]))
        conn = cls.local(
            Grid(*[int(v) for v in data["grid"]]),
            int(data["units"]),
            tuple(int(v) for v in data["field"]),
            broadcast=int(data.get("broadcast", 0)),
        )
        if conn.fan_in != data["fan_in"] or conn.fan_out != data["fan_out"]:
            raise ShapeError("local connectivity descriptor has inconsistent fan-in/fan-out.")
        return conn


@dataclass
class LayerState:
    w: np.ndarray
    conn: Connectivity
    activation: Activation
    skipped_updates: int = field(default=0, compare=False)

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.w = np.ascontiguousarray(self.w, dtype=FLOAT)
        if self.w.shape != (self.conn.fan_in, self.conn.fan_out):
            raise ShapeError(
                f"weights {self.w.shape} do not match connectivity "
                f"({self.conn.fan_in}x{self.conn.fan_out})."
            )
        if self.conn.is_local:
            self.w[~self.conn.mask] = 0.0

    @classmethod
    def initialize(cls, conn, activation, rng, sigma=0.01):
        w = rng.normal(0.0, sigma, size=(conn.fan_in, conn.fan_out)).astype(FLOAT)
        return cls(w=w, conn=conn, activation=activation)

    @property
    def fan_in(self):
        return self.conn.fan_in

    @property
    def fan_out(self):
        return self.conn.fan_out


# ------------------ activations ------------------

def act_identity(y):
    return np.array(y, copy=True)


def act_abs(y):
    return np.abs(y)


def _std_abs_parts(y):
    y64 = np.asarray(y, dtype=ACCUMULATOR)
    z = np.abs(y64)
    centered = z - z.mean(axis=-1, keepdims=True)
    std = z.std(axis=-1, keepdims=True)
    centered_norm = np.linalg.norm(centered, axis=-1, keepdims=True)
    y_norm = np.linalg.norm(y64, axis=-1, keepdims=True)
    degenerate = (std < STD_EPSILON) | (centered_norm == 0)
    return y64, z, centered, centered_norm, y_norm, degenerate


def act_std_abs(y):
    """
    Standardize ``|y|`` across the layer's units, then rescale to ``||y||``.

    When ``|y|`` has no spread the standardization is undefined and plain
    ``|y|`` is returned.
    """
    y64, z, centered, centered_norm, y_norm, degenerate = _std_abs_parts(y)
    safe = np.where(degenerate, 1.0, centered_norm)
    out = np.where(degenerate, z, centered * (y_norm / safe))
    return out.astype(np.asarray(y).dtype, copy=False)


def act_square_norm(y):
    """Elementwise square, normalized to a unit vector."""
    y64 = np.asarray(y, dtype=ACCUMULATOR)
    q = y64 ** 2
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateInputError("square_norm is undefined for a zero vector.")
    return (q / norm).astype(np.asarray(y).dtype, copy=False)


ACTIVATIONS = {
    Activation.IDENTITY: act_identity,
    Activation.ABS: act_abs,
    Activation.STD_ABS: act_std_abs,
    Activation.SQUARE_NORM: act_square_norm,
}


def activate(kind, y):
    return ACTIVATIONS[Activation(kind)](y)


def activation_vjp(kind, y, grad):
    """Pull ``grad`` (w.r.t. ``f(y)``) back to a gradient w.r.t. ``y``."""
    kind = Activation(kind)
    grad = np.asarray(grad, dtype=ACCUMULATOR)
    if kind is Activation.IDENTITY:
        return grad
    if kind is Activation.ABS:
        # sign(0) == 0: the subgradient at the kink.
        return np.sign(y) * grad
    if kind is Activation.SQUARE_NORM:
        y64 = np.asarray(y, dtype=ACCUMULATOR)
        q = y64 ** 2
        norm = np.linalg.norm(q, axis=-1, keepdims=True)
        out = q / norm
        tangent = grad - out * np.sum(out * grad, axis=-1, keepdims=True)
        return 2.0 * y64 * tangent / norm

    y64, _, centered, centered_norm, y_norm, degenerate = _std_abs_parts(y)
    sign = np.sign(y64)
    safe_c = np.where(degenerate, 1.0, centered_norm)
    safe_y = np.where(y_norm == 0, 1.0, y_norm)
    unit = centered / safe_c
    along = np.sum(unit * grad, axis=-1, keepdims=True)
    radial = along * y64 / safe_y
    inner = (y_norm / safe_c) * (grad - unit * along)
    inner = inner - inner.mean(axis=-1, keepdims=True)
    full = radial + sign * inner
    return np.where(degenerate, sign * grad, full)


# ------------------ forward / backward ------------------

def _as_batch(x, fan_in):
    x = np.asarray(x)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != fan_in:
        raise ShapeError(f"input has shape {x.shape}, layer expects dimension {fan_in}.")
    return batch, single


def forward(layer, x):
    """Net input ``y = w^T x`` and activation ``f(y)`` for a sample or a batch of rows."""
    batch, single = _as_batch(x, layer.fan_in)
    y = matmul(batch, layer.w)
    fy = activate(layer.activation, y)
    if single:
        return y[0], fy[0]
    return y, fy


@dataclass
class LayerTrace:
    net_input: np.ndarray
    output: np.ndarray
    # ||f(y)||^2 / ||input||^2, the layer's activation filter.
    ratio: np.ndarray


@dataclass
class ForwardTrace:
    layers: list
    output_activation: np.ndarray

    def filter_product(self):
        product = np.ones_like(self.output_activation, dtype=ACCUMULATOR)
        for layer in self.layers:
            product = product * layer.ratio
        return product


def _sq_norm(v):
    return np.sum(np.asarray(v, dtype=ACCUMULATOR) ** 2, axis=-1)


def forward_trace(layers, x):
    """Run ``x`` through the stack, recording net inputs, outputs and filter ratios."""
    if not layers:
        raise ShapeError("cannot trace an empty layer stack.")
    batch, single = _as_batch(x, layers[0].fan_in)
    current = batch
    records = []
    for layer in layers:
        y, fy = forward(layer, current)
        strength = _sq_norm(current)
        ratio = np.divide(_sq_norm(fy), strength, out=np.zeros_like(strength), where=strength > 0)
        records.append(LayerTrace(net_input=y, output=fy, ratio=ratio))
        current = fy
    activation = _sq_norm(records[-1].net_input)
    if single:
        records = [LayerTrace(r.net_input[0], r.output[0], r.ratio[0]) for r in records]
        activation = activation[0]
    return ForwardTrace(layers=records, output_activation=activation)


def output_activation(layers, x):
    """``||y_top||^2`` for a sample or each row of a batch."""
    current = np.asarray(x)
    y = None
    for layer in layers:
        y, current = forward(layer, current)
    return _sq_norm(y)


def input_gradient(layers, x, output_weights=None):
    """
    Analytic gradient of ``sum_i c_i y_i^2`` at the top layer w.r.t. the input.

    ``output_weights`` holds ``c``; omitted it is all ones, i.e. the output
    activation ``||y_top||^2``.
    """
    batch, single = _as_batch(x, layers[0].fan_in)
    net_inputs = []
    current = batch
    for layer in layers:
        y, current = forward(layer, current)
        net_inputs.append(y)

    top = np.asarray(net_inputs[-1], dtype=ACCUMULATOR)
    grad = 2.0 * top
    if output_weights is not None:
        grad = grad * np.asarray(output_weights, dtype=ACCUMULATOR)
    for index in range(len(layers) - 1, -1, -1):
        grad = grad @ layers[index].w.T.astype(ACCUMULATOR)
        if index > 0:
            below = layers[index - 1]
            grad = activation_vjp(below.activation, net_inputs[index - 1], grad)
    return grad[0] if single else grad


def apply_update(layer, delta):
    """
    Add ``delta`` to the layer's weights and re-zero masked entries.

    An update that is non-finite, or that would leave non-finite weights, is
    skipped and counted; returns whether it was applied.
    """
    delta = np.asarray(delta)
    if delta.shape != layer.w.shape:
        raise ShapeError(f"delta {delta.shape} does not match weights {layer.w.shape}.")
    updated = None
    if np.all(np.isfinite(delta)):
        updated = layer.w + delta.astype(FLOAT, copy=False)
    if updated is None or not np.all(np.isfinite(updated)):
        layer.skipped_updates += 1
        logger.warning(
            "Skipped non-finite update (%d skipped so far) on %dx%d layer",
            layer.skipped_updates,
            layer.fan_in,
            layer.fan_out,
        )
        return False
    if layer.conn.is_local:
        updated[~layer.conn.mask] = 0.0
    layer.w = updated
    return True


# ------------------ per-location kernel form of local layers ------------------

def local_kernel(layer):
    """
    Split a local layer into a per-location kernel and the broadcast weights.

    The kernel has shape ``(H, W, rh, rw, C, units)``; entries whose input
    falls outside the grid are zero. Broadcast weights are ``(broadcast, fan_out)``.
    """
    conn = layer.conn
    if not conn.is_local:
        raise ShapeError("only locally connected layers have a kernel form.")
    h, w, c = conn.grid.as_tuple()
    rh, rw = conn.field_size
    top, left = conn.offsets
    kernel = np.zeros((h, w, rh, rw, c, conn.units), dtype=layer.w.dtype)
    for row in range(h):
        for col in range(w):
            out = (row * w + col) * conn.units + np.arange(conn.units)
            for i in range(rh):
                src_row = row - top + i
                if not 0 <= src_row < h:
                    continue
                for j in range(rw):
                    src_col = col - left + j
                    if not 0 <= src_col < w:
                        continue
                    inp = (src_row * w + src_col) * c + np.arange(c)
                    kernel[row, col, i, j] = layer.w[np.ix_(inp, out)]
    return kernel, layer.w[conn.grid.size:].copy()


def dense_from_kernel(conn, kernel, broadcast_weights=None):
    """Inverse of :func:`local_kernel`: build the masked dense weight matrix."""
    h, w, c = conn.grid.as_tuple()
    rh, rw = conn.field_size
    top, left = conn.offsets
    dense = np.zeros((conn.fan_in, conn.fan_out), dtype=FLOAT)
    for row in range(h):
        for col in range(w):
            out = (row * w + col) * conn.units + np.arange(conn.units)
            for i in range(rh):
                src_row = row - top + i
                if not 0 <= src_row < h:
                    continue
                for j in range(rw):
                    src_col = col - left + j
                    if not 0 <= src_col < w:
                        continue
                    inp = (src_row * w + src_col) * c + np.arange(c)
                    dense[np.ix_(inp, out)] = kernel[row, col, i, j]
    if conn.broadcast:
        dense[conn.grid.size:] = broadcast_weights
    return dense


def local_forward(conn, kernel, broadcast_weights, x):
    """Sliding-window net input of a local layer from its kernel form."""
    batch, single = _as_batch(x, conn.fan_in)
    h, w, c = conn.grid.as_tuple()
    rh, rw = conn.field_size
    top, left = conn.offsets
    images = np.asarray(batch[:, : conn.grid.size], dtype=ACCUMULATOR).reshape(-1, h, w, c)
    padded = np.pad(images, ((0, 0), (top, rh - 1 - top), (left, rw - 1 - left), (0, 0)))
    windows = sliding_window_view(padded, (rh, rw), axis=(1, 2))
    y = np.einsum("bhwcij,hwijck->bhwk", windows, kernel.astype(ACCUMULATOR))
    y = y.reshape(batch.shape[0], conn.fan_out)
    if conn.broadcast:
        y = y + batch[:, conn.grid.size:].astype(ACCUMULATOR) @ broadcast_weights.astype(ACCUMULATOR)
    y = y.astype(FLOAT)
    return y[0] if single else y
