"""Saliency records and their binary file format.

Layout (all little-endian)::

    offset  size  field
    0       4     magic b"HDMS"
    4       2     format version (uint16, currently 1)
    6       4     height (uint32)
    10      4     width (uint32)
    14      4     class index (int32, -1 when unknown)
    18      2     method label length L (uint16)
    20      L     method label (UTF-8)
    20+L    4*H*W map values, float32, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, UnsupportedVersionError

MAGIC = b"HDMS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIiH")


@dataclass(frozen=True)
class SaliencyRecord:
    """A saliency map plus provenance.  The map is stored as float32."""

    map: np.ndarray
    method: str = "hdm"
    target: int = -1
    source: str | None = None

    def __post_init__(self):
        m = np.asarray(self.map)
        if m.ndim != 2 or min(m.shape) < 1:
            raise InputError(f"saliency map must be a non-empty 2-D array, got shape {m.shape}")
        m = m.astype("<f4")
        if not np.all(np.isfinite(m)):
            raise InputError("saliency map contains non-finite values")
        object.__setattr__(self, "map", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.map.shape  # type: ignore[return-value]


def to_bytes(record: SaliencyRecord) -> bytes:
    label = record.method.encode("utf-8")
    if len(label) > 0xFFFF:
        raise InputError("method label longer than 65535 bytes")
    h, w = record.shape
    header = _HEADER.pack(MAGIC, VERSION, h, w, int(record.target), len(label))
    return header + label + np.ascontiguousarray(record.map, dtype="<f4").tobytes()


def from_bytes(data: bytes, source: str | None = None) -> SaliencyRecord:
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: expected at least {_HEADER.size} bytes, got {len(data)}")
    magic, version, h, w, target, label_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a saliency file")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported saliency format version {version} (this build reads {VERSION})")
    expected = _HEADER.size + label_len + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, got {len(data)}")
    start = _HEADER.size + label_len
    try:
        label = data[_HEADER.size:start].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("method label is not valid UTF-8") from exc
    values = np.frombuffer(data, dtype="<f4", count=h * w, offset=start).reshape(h, w).copy()
    if not np.all(np.isfinite(values)):
        raise FormatError("saliency payload contains non-finite values")
    return SaliencyRecord(values, label, target, source)


def save_saliency(record: SaliencyRecord, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(record))


def load_saliency(path: str | Path) -> SaliencyRecord:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"saliency file not found: {path}")
    return from_bytes(path.read_bytes(), source=str(path))
