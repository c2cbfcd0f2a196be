"""Binary checkpoint container.

Layout (little-endian throughout)::

    b"FERC" | u32 version=1
    u32 header_len | header_len bytes UTF-8 JSON
        {"preset", "labels", "norm_mean", "norm_std", "epoch"}
    u32 n_tensors
    per tensor: u32 name_len | name | u32 rank | rank x u32 extents | f32 data
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LABEL_NAMES
from .nn.model import get_preset

MAGIC = b"FERC"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class ModelCheckpoint:
    preset: str
    params: dict  # name -> float32 array, in preset order
    norm_mean: float = 0.0
    norm_std: float = 1.0
    epoch: int = 0
    labels: tuple = field(default=LABEL_NAMES)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.params = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.params.items()}

    def validate(self):
        expected = get_preset(self.preset).parameter_shapes()
        if list(self.params) != list(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise CheckpointError(f"checkpoint does not match preset {self.preset}: "
                                  f"missing {missing}, unexpected {extra}")
        for k, shape in expected.items():
            if self.params[k].shape != shape:
                raise CheckpointError(f"{k}: shape {self.params[k].shape}, preset wants {shape}")
        if self.labels != LABEL_NAMES:
            raise CheckpointError(f"label table {self.labels} differs from {LABEL_NAMES}")
        if not self.norm_std > 0:
            raise CheckpointError("normalization std must be positive")

    def __eq__(self, other):
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (self.preset == other.preset and self.labels == other.labels
                and self.norm_mean == other.norm_mean and self.norm_std == other.norm_std
                and self.epoch == other.epoch and list(self.params) == list(other.params)
                and all(_same_bits(self.params[k], other.params[k]) for k in self.params))


def _same_bits(a, b):
    # bit-level, so NaN payloads and signed zeros count
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _u32(n):
    return struct.pack("<I", n)


def dumps(ckpt: ModelCheckpoint) -> bytes:
    header = json.dumps({
        "preset": ckpt.preset,
        "labels": list(ckpt.labels),
        "norm_mean": float(ckpt.norm_mean),
        "norm_std": float(ckpt.norm_std),
        "epoch": int(ckpt.epoch),
    }, sort_keys=True).encode("utf-8")
    parts = [MAGIC, _u32(VERSION), _u32(len(header)), header, _u32(len(ckpt.params))]
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        parts += [_u32(len(raw)), raw, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(arr.astype("<f4", copy=False).tobytes())
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


def loads(data: bytes, expected_preset: str | None = None) -> ModelCheckpoint:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not a FERC checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    view = memoryview(body)
    pos = 4

    def u32():
        nonlocal pos
        if pos + 4 > len(view):
            raise CheckpointError("truncated checkpoint")
        (v,) = struct.unpack_from("<I", view, pos)
        pos += 4
        return v

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = bytes(view[pos:pos + n])
        pos += n
        return chunk

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(take(u32()).decode("utf-8"))
    params = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        if name in params:
            raise CheckpointError(f"tensor {name} appears twice")
        shape = tuple(u32() for _ in range(u32()))
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")

    ckpt = ModelCheckpoint(preset=header["preset"], params=params,
                           norm_mean=header["norm_mean"], norm_std=header["norm_std"],
                           epoch=header["epoch"], labels=tuple(header["labels"]))
    if expected_preset is not None and ckpt.preset != expected_preset:
        raise CheckpointError(f"checkpoint is for preset {ckpt.preset}, not {expected_preset}")
    try:
        ckpt.validate()
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return ckpt


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path, expected_preset: str | None = None) -> ModelCheckpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return loads(Path(path).read_bytes(), expected_preset)
