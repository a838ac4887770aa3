"""
MNIST IDX reader.

    offset  type             value
    0       uint32 BE        magic: 0x0000 08 <ndim> (0x803 images, 0x801 labels)
    4       uint32 BE x ndim dimension sizes
    4+4n    uint8            values, row-major

Files may be gzip-compressed.
"""

import gzip
import logging
import struct
from pathlib import Path

import numpy as np

from data.dataset import Dataset
from data.exceptions import (
    BadMagicError,
    CountMismatchError,
    InvalidLabelError,
    TrailingDataError,
    TruncatedFileError,
)

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


def read_bytes(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    blob = path.read_bytes()
    if blob[:2] == GZIP_MAGIC:
        blob = gzip.decompress(blob)
    return blob


def parse_idx(blob, expected_magic):
    """Decode an in-memory IDX file into a ``uint8`` array."""
    if len(blob) < 4:
        raise TruncatedFileError("IDX file ends inside its magic number.")
    (magic,) = struct.unpack_from(">I", blob)
    if magic != expected_magic:
        raise BadMagicError(f"IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}.")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise TruncatedFileError("IDX file ends inside its dimension header.")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(blob) - header
    if payload < expected:
        raise TruncatedFileError(f"IDX payload has {payload} bytes, header declares {expected}.")
    if payload > expected:
        raise TrailingDataError(f"IDX payload has {payload - expected} bytes past the declared data.")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def read_idx(path, expected_magic):
    return parse_idx(read_bytes(path), expected_magic)


def load_mnist(images_path, labels_path, name="mnist"):
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels.")
    if labels.size and labels.max() > 9:
        raise InvalidLabelError(f"label {int(labels.max())} is outside 0-9.")
    dataset = Dataset(images=images[..., None], labels=labels, name=name)
    logger.info("Loaded %d MNIST samples from %s", len(dataset), images_path)
    return dataset


def encode_idx(array, magic):
    """Serialize a ``uint8`` array as IDX (used to build fixtures)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(f">I{array.ndim}I", magic, *array.shape)
    return header + array.tobytes()
