"""
Pixel-space disturbances and augmentation.

Transforms take images ``(H, W, C)`` or batches ``(N, H, W, C)`` of floats in
[0, 1] (or raw ``uint8``) and return float32 pixels; normalization happens
afterwards, so masked or overdrawn images are renormalized as a whole.
"""

import numpy as np

from data.dataset import as_pixels, normalize_images

MAX_INTENSITY = 1.0
CROP_SIDE = 28


def _batched(images):
    pixels = as_pixels(images)
    single = pixels.ndim == 3
    return (pixels[None] if single else pixels).copy(), single


def mask_bottom(images, ratio):
    """Black out the bottom ``round(ratio * H)`` rows."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}.")
    pixels, single = _batched(images)
    height = pixels.shape[1]
    rows = int(round(ratio * height))
    if rows:
        pixels[:, height - rows:] = 0.0
    return pixels[0] if single else pixels


def add_random_lines(images, width, rng):
    """
    Draw one horizontal and one vertical line of ``width`` pixels per image at
    maximum intensity. Positions are uniform over the valid offsets.
    """
    pixels, single = _batched(images)
    if width <= 0:
        return pixels[0] if single else pixels
    _, height, cols, _ = pixels.shape
    if width > min(height, cols):
        raise ValueError(f"line width {width} exceeds the image size.")
    tops = rng.integers(0, height - width + 1, size=len(pixels))
    lefts = rng.integers(0, cols - width + 1, size=len(pixels))
    for image, top, left in zip(pixels, tops, lefts):
        image[top:top + width, :, :] = MAX_INTENSITY
        image[:, left:left + width, :] = MAX_INTENSITY
    return pixels[0] if single else pixels


def crop_flip(images, offsets, flips, side=CROP_SIDE):
    pixels, single = _batched(images)
    out = np.empty((len(pixels), side, side, pixels.shape[3]), dtype=np.float32)
    for index, (image, (top, left), flip) in enumerate(zip(pixels, offsets, flips)):
        crop = image[top:top + side, left:left + side]
        out[index] = crop[:, ::-1] if flip else crop
    return out[0] if single else out


def augment_crop_flip(images, rng, side=CROP_SIDE):
    """Random ``side x side`` crop and a horizontal flip with probability 1/2."""
    pixels, single = _batched(images)
    height, width = pixels.shape[1:3]
    if side > min(height, width):
        raise ValueError(f"crop side {side} exceeds the image size.")
    count = len(pixels)
    offsets = np.stack(
        [rng.integers(0, height - side + 1, size=count), rng.integers(0, width - side + 1, size=count)],
        axis=1,
    )
    flips = rng.random(count) < 0.5
    out = crop_flip(pixels, offsets, flips, side)
    return out[0] if single else out


def center_crop(images, side=CROP_SIDE):
    pixels, single = _batched(images)
    height, width = pixels.shape[1:3]
    top, left = (height - side) // 2, (width - side) // 2
    offsets = np.tile([top, left], (len(pixels), 1))
    out = crop_flip(pixels, offsets, np.zeros(len(pixels), dtype=bool), side)
    return out[0] if single else out


def row_augmenter(image_shape, side=CROP_SIDE):
    """
    Batch augmentation over normalized data rows for the training loops.

    Rows are reshaped to ``image_shape``, cropped and flipped, then renormalized.
    """

    def augment(rows, rng):
        images = np.asarray(rows, dtype=np.float32).reshape((len(rows),) + tuple(image_shape))
        return normalize_images(augment_crop_flip(images, rng, side))

    return augment
