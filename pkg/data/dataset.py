from dataclasses import dataclass

import numpy as np

from data.exceptions import ZeroNormError

UNIT_NORM_TOLERANCE = 1e-5


def as_pixels(images):
    """Images as float32 in [0, 1]; raw ``uint8`` pixels are scaled by 1/255."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images.astype(np.float32) / 255.0
    return images.astype(np.float32, copy=False)


def normalize_images(images, start=0):
    """
    Flatten images to rows and scale each row to unit L2 norm.

    ``start`` offsets the sample index reported by :class:`ZeroNormError`.
    """
    pixels = as_pixels(images)
    rows = pixels.reshape(len(pixels), -1).astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    empty = np.flatnonzero(norms == 0)
    if empty.size:
        raise ZeroNormError(start + int(empty[0]))
    return (rows / norms[:, None]).astype(np.float32)


def normalize_image(image, index=0):
    return normalize_images(np.asarray(image)[None], start=index)[0]


@dataclass(frozen=True)
class EncodedSample:
    data: np.ndarray
    label: np.ndarray | None = None
    class_id: int | None = None

    def __post_init__(self):
        for name in ("data", "label"):
            block = getattr(self, name)
            if block is None:
                continue
            norm = float(np.linalg.norm(np.asarray(block, dtype=np.float64)))
            if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
                raise ValueError(f"{name} block must have unit norm, got {norm:.6f}.")


@dataclass
class Dataset:
    """
    Images with integer class labels.

    ``images`` has shape ``(N, H, W, C)`` and holds either raw ``uint8`` pixels
    or floats in [0, 1]. Every image must have a non-zero norm.
    """

    images: np.ndarray
    labels: np.ndarray
    name: str = ""
    classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if self.images.ndim != 4:
            raise ValueError(f"images must have shape (N, H, W, C), got {self.images.shape}.")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels.")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes}).")
        flat = self.images.reshape(len(self.images), -1)
        empty = np.flatnonzero(~np.any(flat != 0, axis=1))
        if empty.size:
            raise ZeroNormError(int(empty[0]))

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def pixels(self, indices=None):
        images = self.images if indices is None else self.images[indices]
        return as_pixels(images)

    def vectors(self, indices=None):
        """Unit-normalized data rows."""
        return normalize_images(self.images if indices is None else self.images[indices])

    def sample(self, index, codec=None):
        label = codec.encode(int(self.labels[index])) if codec is not None else None
        return EncodedSample(
            data=normalize_image(self.images[index], index),
            label=label,
            class_id=int(self.labels[index]),
        )

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[indices],
            labels=self.labels[indices],
            name=name or self.name,
            classes=self.classes,
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.classes)

    def with_images(self, images, name=None):
        """Same labels, transformed images (masking, lines, crops)."""
        return Dataset(images=images, labels=self.labels, name=name or self.name, classes=self.classes)
