"""Binary weights format with a JSON sidecar.

Layout (little-endian): ``b"PNPE"``, u32 version, u32 tensor count, then per
tensor a u16 name length, UTF-8 name, u8 ndim, u32 dims, and float32 data in
row-major order. The sidecar ``<path>.json`` holds the architecture, the bin
grid and optional decoding settings.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..bins import DEFAULT_GRID, BinGrid
from .model import ArchitectureConfig, NetworkParams, validate_params

MAGIC = b"PNPE"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic bytes")
    if len(data) < 12:
        raise ModelFormatError("truncated header")
    version, count = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    pos, tensors = 12, {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise ModelFormatError("truncated tensor name")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(data):
                raise ModelFormatError(f"truncated payload for {name!r}")
            if name in tensors:
                raise ModelFormatError(f"duplicate tensor name {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise ModelFormatError(f"truncated file: {exc}") from None
    if pos != len(data):
        raise ModelFormatError(f"{len(data) - pos} trailing bytes")
    return tensors


def save_params(path, params: NetworkParams, grid: BinGrid = DEFAULT_GRID, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_tensors(params.tensors))
    meta = {"architecture": params.config.to_dict(), "grid": grid.to_dict()}
    meta.update(extra or {})
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_meta(path) -> dict:
    side = sidecar_path(path)
    try:
        return json.loads(side.read_text())
    except FileNotFoundError:
        raise ModelFormatError(f"missing sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed sidecar {side}: {exc}") from None


def load_params(path) -> tuple[NetworkParams, BinGrid]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ModelFormatError(f"missing weights file {path}") from None
    tensors = decode_tensors(data)
    meta = load_meta(path)
    try:
        config = ArchitectureConfig.from_dict(meta["architecture"])
        grid = BinGrid.from_dict(meta["grid"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid sidecar: {exc}") from None
    params = NetworkParams(config, tensors)
    try:
        validate_params(params)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    if grid.num_bins != config.num_bins:
        raise ModelFormatError("grid and architecture disagree on the number of bins")
    return params, grid
