"""Versioned binary checkpoint container.

Layout, all integers little-endian::

    magic        4 bytes   b"FGCK"
    version      uint32    currently 1
    header_len   uint64
    header       header_len bytes of UTF-8 JSON:
                   {"format_version": 1, "config": {...}, "n_tensors": N}
    N records, each:
      name_len   uint32
      name       name_len bytes UTF-8
      trainable  uint8     1 for adapter/head tensors, 0 for frozen backbone
      width      uint8     element width in bytes, 4 (float32) or 8 (float64)
      ndim       uint32
      dims       ndim x uint64
      values     prod(dims) * width bytes, little-endian IEEE floats, C order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "CheckpointError", "FORMAT_VERSION"]

MAGIC = b"FGCK"
FORMAT_VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    trainable: dict[str, bool]

    def frozen_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if not t]

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if t]


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    trainable: Mapping[str, bool],
    config: Mapping | None = None,
) -> None:
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": dict(config or {}), "n_tensors": len(tensors)},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            width = arr.dtype.itemsize
            if width not in _DTYPES or not np.issubdtype(arr.dtype, np.floating):
                raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<BBI", int(bool(trainable.get(name, False))), width, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[width]).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        return _parse(path, data)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None


def _parse(path: str | Path, data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 16
    header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    tensors: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for _ in range(header["n_tensors"]):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        flag, width, ndim = struct.unpack_from("<BBI", data, pos)
        pos += 6
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dtype = _DTYPES.get(width)
        if dtype is None:
            raise CheckpointError(f"tensor {name!r}: bad element width {width}")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += count * width
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
        trainable[name] = bool(flag)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(header["config"], tensors, trainable)
