"""
Binary checkpoint format.

    offset  type              value
    0       4 bytes           magic "ACTL"
    4       uint16 LE         format version
    6       uint32 LE         header length H
    10      H bytes           UTF-8 JSON: layout, norm policy, per-layer
                              connectivity descriptor, activation tag, shape
    10+H    float32 LE        weights of each layer, row-major, in order
    end-8   8 bytes           BLAKE2b-64 digest of every preceding byte
"""

import hashlib
import json
import logging
import struct
from pathlib import Path

import numpy as np

from core.exceptions import (
    BadMagicError,
    ChecksumMismatchError,
    CheckpointError,
    VersionSkewError,
)
from core.layers import Connectivity, LayerState
from core.network import BlockLayout, NetworkModel

logger = logging.getLogger(__name__)

MAGIC = b"ACTL"
VERSION = 1
PREAMBLE = struct.Struct("<4sHI")
CHECKSUM_SIZE = 8
WEIGHT_DTYPE = np.dtype("<f4")


def checksum(payload):
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


def dumps(model):
    header = {
        "layout": model.layout.descriptor(),
        "norm_policy": model.norm_policy.value,
        "layers": [
            {
                "connectivity": layer.conn.descriptor(),
                "activation": layer.activation.value,
                "rows": layer.fan_in,
                "cols": layer.fan_out,
            }
            for layer in model.layers
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray(PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
    body += header_bytes
    for layer in model.layers:
        body += np.ascontiguousarray(layer.w, dtype=WEIGHT_DTYPE).tobytes(order="C")
    body += checksum(bytes(body))
    return bytes(body)


def loads(blob):
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not an activation-learning checkpoint (bad magic).")
    if len(blob) < PREAMBLE.size + CHECKSUM_SIZE:
        raise ChecksumMismatchError("checkpoint is truncated.")
    _, version, header_length = PREAMBLE.unpack_from(blob)
    if version != VERSION:
        raise VersionSkewError(f"checkpoint version {version}, this build reads version {VERSION}.")
    body, digest = blob[:-CHECKSUM_SIZE], blob[-CHECKSUM_SIZE:]
    if checksum(body) != digest:
        raise ChecksumMismatchError("checkpoint checksum mismatch (corrupt or truncated file).")

    offset = PREAMBLE.size
    try:
        header = json.loads(body[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("checkpoint header is not valid JSON.") from exc
    offset += header_length

    layers = []
    for spec in header["layers"]:
        rows, cols = int(spec["rows"]), int(spec["cols"])
        size = rows * cols * WEIGHT_DTYPE.itemsize
        if offset + size > len(body):
            raise CheckpointError("checkpoint payload is shorter than its header declares.")
        w = np.frombuffer(body, dtype=WEIGHT_DTYPE, count=rows * cols, offset=offset)
        offset += size
        layers.append(
            LayerState(
                w=w.reshape(rows, cols).astype(np.float32),
                conn=Connectivity.from_descriptor(spec["connectivity"]),
                activation=spec["activation"],
            )
        )
    if offset != len(body):
        raise CheckpointError("checkpoint has unexpected trailing bytes.")
    return NetworkModel(
        layers=layers,
        layout=BlockLayout.from_descriptor(header["layout"]),
        norm_policy=header["norm_policy"],
    )


def save_checkpoint(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(model))
    logger.info("Saved %d-layer checkpoint to %s", len(model.layers), path)
    return path


def load_checkpoint(path):
    path = Path(path)
    model = loads(path.read_bytes())
    logger.info("Loaded %d-layer checkpoint from %s", len(model.layers), path)
    return model
