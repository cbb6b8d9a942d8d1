"""Binary checkpoint files.

Layout::

    b"SCFG"                      4 bytes magic
    version                      uint32 little-endian
    header_len                   uint64 little-endian
    header                       header_len bytes of UTF-8 JSON
    payload                      raw little-endian float32 tensors

The header holds the model config, training metadata and a tensor table of
``{"name", "shape", "offset", "nbytes"}`` entries; offsets are relative to the
start of the payload and tensors are packed back to back in table order.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build_model

MAGIC = b"SCFG"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_LE_F32 = np.dtype("<f4")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class LayoutError(CheckpointError):
    """Header tensor table is inconsistent with itself or with the model."""


class ShortReadError(CheckpointError):
    pass


def _encode_header(config: ModelConfig, metadata: dict, table: list[dict]) -> bytes:
    header = {"config": config.to_dict(), "metadata": metadata, "tensors": table}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(model: Model, metadata: dict, path) -> None:
    """Write ``model`` and ``metadata`` to ``path`` atomically."""
    table, blobs, offset = [], [], 0
    for name, arr in model.state_dict().items():
        data = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = _encode_header(model.config, dict(metadata), table)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[ModelConfig, dict, dict[str, np.ndarray]]:
    """Parse a checkpoint file into (config, metadata, tensors) without building a model."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    if len(raw) < _PREFIX.size:
        raise ShortReadError(f"{path}: file ends inside the fixed prefix")
    _, version, header_len = _PREFIX.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(raw) < start + header_len:
        raise ShortReadError(f"{path}: header needs {header_len} bytes, only {len(raw) - start} present")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        metadata = header["metadata"]
        table = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise LayoutError(f"{path}: unreadable header ({exc})") from exc

    payload = memoryview(raw)[start + header_len:]
    tensors, expected_offset = {}, 0
    for entry in table:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != 4 * math.prod(shape):
            raise LayoutError(f"{path}: tensor {name} has shape {shape} but {nbytes} bytes")
        if offset != expected_offset:
            raise LayoutError(f"{path}: tensor {name} at offset {offset}, expected {expected_offset}")
        if offset + nbytes > len(payload):
            raise ShortReadError(
                f"{path}: tensor {name} needs bytes [{offset}, {offset + nbytes}) but payload has {len(payload)}"
            )
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype=_LE_F32).reshape(shape)
        tensors[name] = arr.astype(np.float32)
        expected_offset = offset + nbytes
    if expected_offset != len(payload):
        raise LayoutError(f"{path}: {len(payload) - expected_offset} trailing bytes after last tensor")
    return config, metadata, tensors


def load_checkpoint(path) -> tuple[Model, dict]:
    config, metadata, tensors = read_checkpoint(path)
    model = build_model(config)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise LayoutError(f"{path}: tensors do not fit the stored config ({exc})") from exc
    return model, metadata
