"""
CIFAR-10 binary batches: records of one label byte followed by 3072 pixel
bytes, stored as 1024 red, 1024 green and 1024 blue values row-major.
"""

import logging

import numpy as np

from data.dataset import Dataset
from data.exceptions import InvalidLabelError, RecordSizeError
from data.idx import read_bytes

logger = logging.getLogger(__name__)

SIDE = 32
CHANNELS = 3
RECORD_SIZE = 1 + SIDE * SIDE * CHANNELS
LABEL_NAMES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


def parse_cifar10(blob):
    """Decode one batch into ``(N, 32, 32, 3)`` uint8 images and labels."""
    if not blob or len(blob) % RECORD_SIZE:
        raise RecordSizeError(f"{len(blob)} bytes is not a whole number of {RECORD_SIZE}-byte records.")
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_SIZE)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise InvalidLabelError(f"record {int(bad[0])} has label {int(labels[bad[0]])}.")
    planes = records[:, 1:].reshape(-1, CHANNELS, SIDE, SIDE)
    return np.ascontiguousarray(planes.transpose(0, 2, 3, 1)), labels


def encode_cifar10(images, labels):
    """Serialize ``(N, 32, 32, 3)`` images and labels as a binary batch."""
    images = np.asarray(images, dtype=np.uint8)
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    records = np.hstack([np.asarray(labels, dtype=np.uint8)[:, None], planes])
    return records.tobytes()


def load_cifar10(paths, name="cifar10"):
    if isinstance(paths, (str, bytes)) or hasattr(paths, "read_bytes"):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        batch_images, batch_labels = parse_cifar10(read_bytes(path))
        images.append(batch_images)
        labels.append(batch_labels)
    dataset = Dataset(images=np.concatenate(images), labels=np.concatenate(labels), name=name)
    logger.info("Loaded %d CIFAR-10 samples from %d batch file(s)", len(dataset), len(paths))
    return dataset
