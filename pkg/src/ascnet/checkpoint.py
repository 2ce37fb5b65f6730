"""ASCC checkpoint container.

Layout (little-endian)::

    b"ASCC" | u32 version=1
    u32 config_len | config_len bytes of UTF-8 "key=value" lines (model config)
    u32 array_count
    array_count x ( u16 name_len | name | u32 rows | u32 cols | rows*cols float64 )

Arrays are the parameters (``param/<name>``), batch-norm running statistics
(``bn/<unit>/running_mean`` and ``running_var``) and, when present, the
optimizer velocities (``momentum/<name>``), in that order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import BadMagicError, FormatError, ShapeError, TruncatedFileError, UnsupportedVersionError
from .model import AscNet, ModelConfig, build

MAGIC = b"ASCC"
VERSION = 1


def _array_record(name: str, values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype="<f8")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    raw = name.encode("utf-8")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<II", *arr.shape)
            + np.ascontiguousarray(arr).tobytes())


def encode_checkpoint(net: AscNet, velocity: dict[str, np.ndarray] | None = None) -> bytes:
    config = "".join(f"{k}={v}\n" for k, v in net.config.to_items()).encode("utf-8")
    records = []
    for name, p in net.parameters().items():
        records.append(_array_record(f"param/{name}", p.values))
    for name, unit in net.named_units():
        records.append(_array_record(f"bn/{name}/running_mean", unit.stats.running_mean))
        records.append(_array_record(f"bn/{name}/running_var", unit.stats.running_var))
    for name, v in (velocity or {}).items():
        records.append(_array_record(f"momentum/{name}", v))
    head = MAGIC + struct.pack("<I", VERSION) + struct.pack("<I", len(config)) + config
    return head + struct.pack("<I", len(records)) + b"".join(records)


def save_checkpoint(path: str | os.PathLike, net: AscNet,
                    velocity: dict[str, np.ndarray] | None = None) -> int:
    blob = encode_checkpoint(net, velocity)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise TruncatedFileError(f"checkpoint truncated while reading {what}", self.pos)
        out = self.blob[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(blob: bytes) -> tuple[AscNet, dict[str, np.ndarray]]:
    """Rebuild the network and return it with the stored optimizer velocities."""
    reader = _Reader(blob)
    if reader.take(4, "magic") != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    version = reader.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}", 4)
    config_len = reader.u32("config length")
    text = reader.take(config_len, "config").decode("utf-8")
    items = dict(line.split("=", 1) for line in text.splitlines() if line)
    config = ModelConfig.from_items(items)
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32("array count")):
        start = reader.pos
        (name_len,) = struct.unpack("<H", reader.take(2, "name length"))
        name = reader.take(name_len, "name").decode("utf-8")
        rows, cols = struct.unpack("<II", reader.take(8, f"shape of {name}"))
        data = reader.take(rows * cols * 8, f"values of {name}")
        if name in arrays:
            raise FormatError(f"duplicate array {name!r}", start)
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if reader.pos != len(blob):
        raise FormatError("trailing bytes after the last array", reader.pos)

    net = build(config, np.random.default_rng(0))
    dtype = config.dtype

    def fetch(name: str, shape) -> np.ndarray:
        if name not in arrays:
            raise FormatError(f"checkpoint is missing {name!r}", len(blob))
        arr = arrays.pop(name)
        if arr.shape != tuple(shape):
            raise ShapeError(f"{name}: stored shape {arr.shape}, model expects {tuple(shape)}")
        return arr

    for name, p in net.parameters().items():
        p.values = fetch(f"param/{name}", p.shape).astype(dtype)
    for name, unit in net.named_units():
        width = unit.stats.running_mean.shape[0]
        unit.stats.running_mean = fetch(f"bn/{name}/running_mean", (1, width))[0].astype(dtype)
        unit.stats.running_var = fetch(f"bn/{name}/running_var", (1, width))[0].astype(dtype)
    velocity = {}
    for name, p in net.parameters().items():
        key = f"momentum/{name}"
        if key in arrays:
            velocity[name] = fetch(key, p.shape).astype(dtype)
    if arrays:
        raise FormatError(f"unexpected arrays in checkpoint: {sorted(arrays)}", len(blob))
    return net, velocity


def load_checkpoint(path: str | os.PathLike) -> tuple[AscNet, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
