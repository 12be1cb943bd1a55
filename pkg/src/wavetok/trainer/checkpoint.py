"""Versioned binary checkpoints.

Layout (little-endian):
    b"DYWC" | u32 version | u32 n | n bytes of JSON header
    | u32 count | count x (u16 name length, name, u8 ndim, ndim x u64, float64 data)

The JSON header holds the TrainConfig plus channel and class counts, so a
checkpoint alone is enough to rebuild the model.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig
from .model import Model

MAGIC = b"DYWC"
VERSION = 1


class CheckpointFormatError(ValueError):
    """File is not a well-formed checkpoint."""


class CheckpointMismatch(ValueError):
    """Checkpoint parameters do not fit the requested model."""


@dataclass
class Checkpoint:
    config: TrainConfig
    channels: int
    classes: int
    state: dict[str, np.ndarray]

    def build(self, variant: str | None = None) -> Model:
        """Rebuild the model; ``variant`` may switch between variants that
        share parameters (e.g. full and no_fusion)."""
        cfg = self.config if variant is None else replace(self.config, variant=variant)
        try:
            model = Model(cfg, self.channels, self.classes)
        except ConfigError as exc:
            raise CheckpointMismatch(str(exc)) from exc
        own = dict(model.named_parameters())
        missing = sorted(set(own) - set(self.state))
        extra = sorted(set(self.state) - set(own))
        if missing or (extra and variant is None):
            raise CheckpointMismatch(f"parameter names differ: missing={missing} unexpected={extra}")
        try:
            model.load_state_dict({k: self.state[k] for k in own})
        except ValueError as exc:
            raise CheckpointMismatch(str(exc)) from exc
        return model


def _header(model: Model) -> bytes:
    doc = {"config": model.cfg.to_dict(), "channels": model.channels, "classes": model.classes}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    header = _header(model)
    buf.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
    params = model.state_dict()
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        value = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<HB", len(raw), value.ndim) + raw)
        buf.write(struct.pack(f"<{value.ndim}Q", *value.shape))
        buf.write(value.tobytes())
    return buf.getvalue()


def save(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    try:
        doc = json.loads(r.take(n))
        cfg = TrainConfig.from_dict(doc["config"])
        channels, classes = int(doc["channels"]), int(doc["classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"checkpoint header unreadable: {exc}") from exc
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        length, ndim = r.unpack("<HB")
        name = r.take(length).decode()
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(raw):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return Checkpoint(cfg, channels, classes, state)


def load(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
