"""Emitter for the .qemb embedding-file pair.

The format this writes is the ranking engine's input contract: a 24-byte
header (magic ``QEMB``, u16 version = 1, u16 reserved, u32 dimension,
u64 count, 4 zero pad bytes, little-endian) followed by count x dimension
float32 values row-major, plus a ``<name>.qemb.meta.jsonl`` sidecar with
one JSON record per row. The exporter deliberately does not import the
engine; the two packages meet only at these bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"QEMB"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ4s")

KINDS = ("image_view", "text", "owk", "label", "param")


def sidecar_path(path: str) -> str:
    return str(path) + ".meta.jsonl"


def _atomic_write(path: str, data: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_qemb(path: str, vectors: np.ndarray, records: list[dict]) -> None:
    """Write an embedding matrix and its per-row records as a .qemb pair.

    Accepts any 2-d float-convertible array; rows are stored little-endian
    float32. A zero-row matrix is a valid (empty) corpus.
    """
    vectors = np.ascontiguousarray(np.asarray(vectors, dtype="<f4"))
    if vectors.ndim != 2:
        raise DataError(f"write_qemb: vectors must be 2-d, got shape {vectors.shape}")
    count, dim = vectors.shape
    if dim < 1:
        raise DataError("write_qemb: dimension must be >= 1")
    if len(records) != count:
        raise DataError(f"write_qemb: {len(records)} records for {count} rows")
    if count and not np.all(np.isfinite(vectors)):
        raise DataError("write_qemb: non-finite values")
    for rec in records:
        if "id" not in rec or "kind" not in rec:
            raise DataError("write_qemb: record missing id/kind")
        if rec["kind"] not in KINDS:
            raise DataError(f"write_qemb: unknown kind {rec['kind']!r}")

    header = _HEADER.pack(MAGIC, VERSION, 0, dim, count, b"\x00" * 4)
    _atomic_write(str(path), header + vectors.tobytes(order="C"))
    lines = "".join(
        json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in records
    )
    _atomic_write(sidecar_path(path), lines.encode("utf-8"))
