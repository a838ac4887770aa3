"""
Feature maps and portable image grids.

Grids are written as binary PGM (grey) or PPM (RGB) files so they can be
opened by any image viewer without a plotting dependency.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.layers import forward, input_gradient

logger = logging.getLogger(__name__)

DEFAULT_UNITS = 36


@dataclass
class FeatureMaps:
    layer: int
    units: np.ndarray
    mean_activation: np.ndarray
    maps: np.ndarray


def mean_unit_activation(model, inputs, layer_index=0, batch_size=500):
    """Mean squared net input ``E[y_j^2]`` of every unit in one layer."""
    layers = model.layers[: layer_index + 1]
    total = np.zeros(layers[-1].fan_out, dtype=np.float64)
    for start in range(0, len(inputs), batch_size):
        current = inputs[start:start + batch_size]
        for layer in layers:
            y, current = forward(layer, current)
        total += np.sum(np.asarray(y, dtype=np.float64) ** 2, axis=0)
    return total / max(len(inputs), 1)


def most_active_units(model, inputs, count=DEFAULT_UNITS, layer_index=0):
    activation = mean_unit_activation(model, inputs, layer_index)
    order = np.argsort(-activation, kind="stable")[:count]
    return order, activation[order]


def unit_gradient_maps(model, units, at, layer_index=0):
    """
    Gradient of each unit's ``y_j^2`` w.r.t. the input, evaluated at ``at``.

    Only the data block of the gradient is returned, one row per unit.
    """
    layers = model.layers[: layer_index + 1]
    data = model.layout.slice_of("data")
    x = np.asarray(at, dtype=np.float64)
    maps = []
    for unit in units:
        selector = np.zeros(layers[-1].fan_out)
        selector[unit] = 1.0
        maps.append(np.asarray(input_gradient(layers, x, output_weights=selector))[data])
    return np.stack(maps) if maps else np.zeros((0, data.stop - data.start))


def visualize_features(model, inputs, count=DEFAULT_UNITS, layer_index=0, at=None):
    """
    Input-gradient maps of the ``count`` most active units of a layer.

    The gradient is taken at ``at``, by default the normalized mean input.
    """
    inputs = np.asarray(inputs)
    units, activation = most_active_units(model, inputs, count, layer_index)
    if at is None:
        mean = inputs.astype(np.float64).mean(axis=0)
        at = mean / np.linalg.norm(mean)
    maps = unit_gradient_maps(model, units, at, layer_index)
    shape = model.layout.data_block.shape
    return FeatureMaps(
        layer=layer_index,
        units=units,
        mean_activation=activation,
        maps=maps.reshape((len(units),) + tuple(shape)),
    )


# ------------------ image grids ------------------

def to_display(tile):
    """Center, fix the spread and clip to 8-bit."""
    tile = np.asarray(tile, dtype=np.float64)
    tile = tile - tile.mean()
    tile = tile / (tile.std() + 1e-5) * 0.1 + 0.5
    return (np.clip(tile, 0.0, 1.0) * 255).astype(np.uint8)


def to_intensity(tile):
    """Scale a non-negative image by its maximum to 8-bit."""
    tile = np.asarray(tile, dtype=np.float64)
    peak = tile.max()
    scaled = tile / peak if peak > 0 else tile
    return (np.clip(scaled, 0.0, 1.0) * 255).astype(np.uint8)


def tile_grid(images, columns, pad=1, render=to_display):
    """Arrange ``(N, H, W[, C])`` images into one grid with ``pad`` black pixels between tiles."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[..., None]
    count, height, width, channels = images.shape
    rows = max(1, -(-count // columns))
    grid = np.zeros(
        (rows * (height + pad) + pad, columns * (width + pad) + pad, channels), dtype=np.uint8
    )
    for index, image in enumerate(images):
        r, c = divmod(index, columns)
        top, left = pad + r * (height + pad), pad + c * (width + pad)
        grid[top:top + height, left:left + width] = render(image)
    return grid[..., 0] if channels == 1 else grid


def write_pnm(path, grid):
    """Write a ``uint8`` grid as PGM (2-D) or PPM (3 channels)."""
    grid = np.asarray(grid, dtype=np.uint8)
    if grid.ndim == 2:
        magic = b"P5"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write a grid of shape {grid.shape}.")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = b"%s\n%d %d\n255\n" % (magic, grid.shape[1], grid.shape[0])
    path.write_bytes(header + grid.tobytes())
    logger.info("Wrote %dx%d image grid to %s", grid.shape[1], grid.shape[0], path)
    return path


def read_pnm(path):
    blob = Path(path).read_bytes()
    magic, dims, maxval, body = blob.split(b"\n", 3)
    width, height = (int(v) for v in dims.split())
    if int(maxval) != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported image file {path}.")
    shape = (height, width) if magic == b"P5" else (height, width, 3)
    return np.frombuffer(body, dtype=np.uint8).reshape(shape)
