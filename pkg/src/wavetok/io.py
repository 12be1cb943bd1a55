"""Signal/stack containers and token reports.

Binary container (little-endian): b"DYWV" | u32 version=1 | u32 rows |
u64 length | rows*length float32, row-major. A signal stores one row per
channel; a wavelet stack stores (J+1)*C rows ordered dX_1..dX_J, A with
channels inner. CSV signals have a ``c0,c1,...`` header and one row per
timestep.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import Assignment

MAGIC = b"DYWV"
VERSION = 1
_HEAD = struct.Struct("<4sIIQ")


class SignalFormatError(ValueError):
    """Malformed or non-finite signal file."""


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def encode_rows(rows: np.ndarray) -> bytes:
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        raise SignalFormatError(f"expected a non-empty (rows, L) array, got shape {rows.shape}")
    payload = np.ascontiguousarray(rows, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise SignalFormatError("values must be finite in 32-bit storage")
    return _HEAD.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1]) + payload.tobytes()


def decode_rows(raw: bytes) -> np.ndarray:
    if len(raw) < _HEAD.size:
        raise SignalFormatError("file shorter than the container header")
    magic, version, rows, length = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise SignalFormatError("bad magic; not a signal container")
    if version != VERSION:
        raise SignalFormatError(f"unsupported container version {version}")
    if rows < 1 or length < 1:
        raise SignalFormatError("container declares an empty signal")
    expected = 4 * rows * length
    if len(raw) - _HEAD.size != expected:
        raise SignalFormatError(f"payload is {len(raw) - _HEAD.size} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEAD.size).reshape(rows, length)
    if not np.all(np.isfinite(data)):
        raise SignalFormatError("payload contains non-finite values")
    return data.astype(np.float64)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def encode_csv(x: np.ndarray) -> str:
    x = np.asarray(x, dtype=np.float32)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([f"c{i}" for i in range(x.shape[0])])
    for row in x.T:
        w.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def decode_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SignalFormatError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if header != [f"c{i}" for i in range(len(header))] or not header:
        raise SignalFormatError("CSV header must be c0,c1,...")
    body = [r for r in rows[1:] if r]
    if not body:
        raise SignalFormatError("CSV has no samples")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise SignalFormatError(f"non-numeric CSV value: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise SignalFormatError("CSV rows have inconsistent column counts")
    if not np.all(np.isfinite(data)):
        raise SignalFormatError("CSV contains non-finite values")
    return data.T.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def read_signal(path: str | Path) -> np.ndarray:
    """(C, L) float64 from a binary container or a CSV file."""
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        return decode_rows(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise SignalFormatError(f"{path}: neither a signal container nor UTF-8 CSV") from None
    return decode_csv(text)


def write_signal(path: str | Path, x: np.ndarray) -> None:
    """Binary container, or CSV when the suffix is .csv."""
    path = Path(path)
    x = np.asarray(x)
    if path.suffix.lower() == ".csv":
        path.write_text(encode_csv(x))
    else:
        path.write_bytes(encode_rows(x))


def stack_rows(planes: np.ndarray) -> np.ndarray:
    """(J+1, C, L) -> ((J+1)*C, L), channels inner."""
    planes = np.asarray(planes)
    return planes.reshape(-1, planes.shape[-1])


def rows_stack(rows: np.ndarray, levels: int) -> np.ndarray:
    rows = np.asarray(rows)
    if rows.shape[0] % (levels + 1):
        raise SignalFormatError(f"{rows.shape[0]} rows do not split into {levels + 1} planes")
    return rows.reshape(levels + 1, rows.shape[0] // (levels + 1), rows.shape[1])


def write_stack(path: str | Path, planes: np.ndarray) -> None:
    Path(path).write_bytes(encode_rows(stack_rows(planes)))


def read_stack(path: str | Path, levels: int) -> np.ndarray:
    return rows_stack(decode_rows(Path(path).read_bytes()), levels)


# ---------------------------------------------------------------------------
# token reports
# ---------------------------------------------------------------------------

@dataclass
class TokenReport:
    """Anchors and clusters are 1-based and inclusive in the JSON form."""

    length: int
    channels: int
    tau: float
    anchors: list[int]
    saliency: list[float]
    clusters: list[list[int]]
    variant: str | None = None
    tokens: list[list[float]] | None = None

    @property
    def token_count(self) -> int:
        return len(self.anchors)

    @classmethod
    def build(
        cls,
        assignment: Assignment,
        saliency: np.ndarray,
        channels: int,
        tau: float,
        variant: str | None = None,
        tokens: np.ndarray | None = None,
    ) -> "TokenReport":
        anchors = [int(a) + 1 for a in assignment.anchors]
        clusters = [[int(s) + 1, int(e) + 1] for s, e in assignment.bounds]
        return cls(
            length=int(len(saliency)),
            channels=channels,
            tau=float(tau),
            anchors=anchors,
            saliency=[float(v) for v in np.asarray(saliency, dtype=np.float64)],
            clusters=clusters,
            variant=variant,
            tokens=None if tokens is None else [[float(v) for v in row] for row in np.asarray(tokens, dtype=np.float64)],
        )

    def to_dict(self) -> dict:
        doc = {
            "L": self.length,
            "C": self.channels,
            "tau": self.tau,
            "anchors": self.anchors,
            "saliency": self.saliency,
            "clusters": self.clusters,
            "token_count": self.token_count,
        }
        if self.variant is not None:
            doc["variant"] = self.variant
        if self.tokens is not None:
            doc["tokens"] = self.tokens
        return doc

    def dumps(self) -> str:
        return dump_json(self.to_dict())


def dump_json(doc: dict) -> str:
    """Canonical JSON text used for every emitted document."""
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"
