"""Binary corpus format and the domain containers every stage shares.

A corpus lives in two files: ``<name>.qemb`` holds a fixed 24-byte header
(magic ``QEMB``, u16 version = 1, u16 reserved, u32 dimension, u64 count,
4 zero pad bytes, all little-endian) followed by count x dimension float32
values row-major, and ``<name>.qemb.meta.jsonl`` holds one JSON record per
row (id, kind, optional label_text / text_ref / view_index).

Vectors are float32 on disk; in-memory copies stay float32 and all
arithmetic elsewhere upcasts to float64. Loading validates everything it
can see: magic, version, pad bytes, payload length, sidecar line count,
finiteness. Writes go to a temp file first and are renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import DataError
from .metrics import HierarchicalLabel, parse_hierarchy
from .vectors import normalize_rows

MAGIC = b"QEMB"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ4s")
HEADER_SIZE = _HEADER.size  # 24 bytes

KIND_IMAGE_VIEW = "image_view"
KIND_TEXT = "text"
KIND_OWK = "owk"
KIND_LABEL = "label"
KIND_PARAM = "param"
KINDS = (KIND_IMAGE_VIEW, KIND_TEXT, KIND_OWK, KIND_LABEL, KIND_PARAM)


def sidecar_path(path: str) -> str:
    return str(path) + ".meta.jsonl"


def _atomic_write(path: str, data: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_qemb(path: str, vectors: np.ndarray, records: list[dict]) -> None:
    """Write vectors + sidecar records as a .qemb pair.

    ``vectors`` is (count, dimension); anything convertible is accepted and
    stored as little-endian float32. One sidecar record per row, in order.
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


def read_qemb(path: str) -> tuple[np.ndarray, list[dict]]:
    """Read a .qemb pair back as (float32 (count, dim) array, records)."""
    if not os.path.exists(path):
        raise DataError(f"read_qemb: no such file {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise DataError("read_qemb: truncated header")
    magic, version, reserved, dim, count, pad = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DataError(f"read_qemb: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"read_qemb: unsupported version {version}")
    if reserved != 0 or pad != b"\x00" * 4:
        raise DataError("read_qemb: nonzero reserved header bytes")
    if dim < 1:
        raise DataError("read_qemb: header dimension must be >= 1")
    payload = raw[HEADER_SIZE:]
    expected = count * dim * 4
    if len(payload) != expected:
        raise DataError(
            f"read_qemb: payload {len(payload)} bytes, header implies {expected}"
        )
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    if count and not np.all(np.isfinite(vectors)):
        raise DataError("read_qemb: non-finite values")

    meta = sidecar_path(path)
    if not os.path.exists(meta):
        raise DataError(f"read_qemb: missing sidecar {meta}")
    records: list[dict] = []
    with open(meta, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"read_qemb: sidecar line {lineno + 1}: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "kind" not in rec:
                raise DataError(f"read_qemb: sidecar line {lineno + 1}: missing id/kind")
            records.append(rec)
    if len(records) != count:
        raise DataError(
            f"read_qemb: sidecar has {len(records)} records, header says {count}"
        )
    return vectors, records


@dataclass
class KnowledgeCorpus:
    """Store of knowledge/text embeddings: (entry_id, vector, source text ref)."""

    entry_ids: list[str]
    vectors: np.ndarray  # (count, dim) float32
    text_refs: list[str]
    kind: str = KIND_OWK

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DataError("KnowledgeCorpus: vectors must be 2-d")
        if not (len(self.entry_ids) == self.vectors.shape[0] == len(self.text_refs)):
            raise DataError("KnowledgeCorpus: length mismatch between fields")
        if len(set(self.entry_ids)) != len(self.entry_ids):
            raise DataError("KnowledgeCorpus: duplicate entry ids")
        if self.kind not in (KIND_OWK, KIND_TEXT):
            raise DataError(f"KnowledgeCorpus: bad kind {self.kind!r}")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def records(self) -> list[dict]:
        return [
            {"id": eid, "kind": self.kind, "text_ref": ref}
            for eid, ref in zip(self.entry_ids, self.text_refs)
        ]


@dataclass
class LabelSpace:
    """Candidate labels with embeddings and parsed hierarchies."""

    labels: list[str]
    vectors: np.ndarray  # (count, dim) float32
    hierarchies: list[HierarchicalLabel] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DataError("LabelSpace: vectors must be 2-d")
        if len(self.labels) != self.vectors.shape[0]:
            raise DataError("LabelSpace: label/vector count mismatch")
        if len(set(self.labels)) != len(self.labels):
            raise DataError("LabelSpace: duplicate label texts")
        if not self.hierarchies:
            self.hierarchies = [parse_hierarchy(text) for text in self.labels]
        if len(self.hierarchies) != len(self.labels):
            raise DataError("LabelSpace: hierarchy count mismatch")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"LabelSpace: unknown label {label!r}") from None

    def records(self) -> list[dict]:
        return [
            {"id": f"label{i:05d}", "kind": KIND_LABEL, "label_text": text}
            for i, text in enumerate(self.labels)
        ]


@dataclass
class ViewEmbeddingSet:
    """Per-item image embeddings, optionally tagged with view index and gt label.

    A base-embedding file has one row per item (no view_index); a projected
    file has n rows per item with view_index 0..n-1.
    """

    item_ids: list[str]
    vectors: np.ndarray  # (rows, dim) float32
    gt_labels: list[Optional[str]] = field(default_factory=list)
    view_indices: list[Optional[int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise DataError("ViewEmbeddingSet: vectors must be 2-d")
        rows = self.vectors.shape[0]
        if len(self.item_ids) != rows:
            raise DataError("ViewEmbeddingSet: id/vector count mismatch")
        if not self.gt_labels:
            self.gt_labels = [None] * rows
        if not self.view_indices:
            self.view_indices = [None] * rows
        if len(self.gt_labels) != rows or len(self.view_indices) != rows:
            raise DataError("ViewEmbeddingSet: metadata length mismatch")
        keys = list(zip(self.item_ids, self.view_indices))
        if len(set(keys)) != len(keys):
            raise DataError("ViewEmbeddingSet: duplicate (item, view) rows")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def records(self) -> list[dict]:
        out = []
        for i, item in enumerate(self.item_ids):
            rec: dict = {"id": item, "kind": KIND_IMAGE_VIEW}
            if self.gt_labels[i] is not None:
                rec["label_text"] = self.gt_labels[i]
            if self.view_indices[i] is not None:
                rec["view_index"] = int(self.view_indices[i])
            out.append(rec)
        return out


@dataclass
class MultiViewEmbedding:
    """The n per-item view vectors, index position = view identity."""

    item_id: str
    views: np.ndarray  # (n, dim) float64

    def __post_init__(self) -> None:
        self.views = np.asarray(self.views, dtype=np.float64)
        if self.views.ndim != 2 or self.views.shape[0] < 1:
            raise DataError("MultiViewEmbedding: views must be (n >= 1, dim)")
        if not np.all(np.isfinite(self.views)):
            raise DataError("MultiViewEmbedding: non-finite views")

    @property
    def n(self) -> int:
        return self.views.shape[0]

    @property
    def dimension(self) -> int:
        return self.views.shape[1]


Corpus = Union[KnowledgeCorpus, LabelSpace, ViewEmbeddingSet]


def save_corpus(corpus: Corpus, path: str) -> None:
    """Persist any corpus container; save -> load is the identity."""
    write_qemb(path, corpus.vectors, corpus.records())


def _require_single_kind(records: Iterable[dict], path: str) -> str:
    kinds = {rec["kind"] for rec in records}
    if len(kinds) > 1:
        raise DataError(f"load_corpus: mixed kinds {sorted(kinds)} in {path}")
    return kinds.pop() if kinds else KIND_OWK


def load_corpus(path: str) -> Corpus:
    """Load a .qemb pair as the container its sidecar kind declares."""
    vectors, records = read_qemb(path)
    kind = _require_single_kind(records, path)
    if kind in (KIND_OWK, KIND_TEXT):
        ids = [rec["id"] for rec in records]
        refs = [rec.get("text_ref", rec["id"]) for rec in records]
        return KnowledgeCorpus(ids, vectors, refs, kind=kind)
    if kind == KIND_LABEL:
        labels = []
        for rec in records:
            if "label_text" not in rec:
                raise DataError(f"load_corpus: label record {rec['id']} missing label_text")
            labels.append(rec["label_text"])
        return LabelSpace(labels, vectors)
    if kind == KIND_IMAGE_VIEW:
        return ViewEmbeddingSet(
            [rec["id"] for rec in records],
            vectors,
            [rec.get("label_text") for rec in records],
            [rec.get("view_index") for rec in records],
        )
    raise DataError(f"load_corpus: cannot build a corpus from kind {kind!r}")


def load_typed(path: str, want: type) -> Corpus:
    corpus = load_corpus(path)
    if not isinstance(corpus, want):
        raise DataError(f"{path}: expected {want.__name__}, found {type(corpus).__name__}")
    return corpus


def normalized_copy(corpus: Corpus) -> Corpus:
    """Same container with rows L2-normalized (float64 math, float32 storage)."""
    rows = normalize_rows(corpus.vectors.astype(np.float64)).astype(np.float32)
    if isinstance(corpus, KnowledgeCorpus):
        return KnowledgeCorpus(list(corpus.entry_ids), rows, list(corpus.text_refs), kind=corpus.kind)
    if isinstance(corpus, LabelSpace):
        return LabelSpace(list(corpus.labels), rows, list(corpus.hierarchies))
    if isinstance(corpus, ViewEmbeddingSet):
        return ViewEmbeddingSet(
            list(corpus.item_ids), rows, list(corpus.gt_labels), list(corpus.view_indices)
        )
    raise DataError(f"normalized_copy: unsupported type {type(corpus).__name__}")


def save_params(tensors: dict[str, np.ndarray], path: str) -> None:
    """Persist named parameter tensors as kind=param rows.

    Rows are zero-padded to the widest tensor row; the sidecar keeps the true
    length, tensor name, row index, and rank so loading reconstructs shapes
    exactly. Tensor order is name-sorted for byte-stable files.
    """
    names = sorted(tensors)
    if not names:
        raise DataError("save_params: no tensors")
    prepared: list[tuple[str, np.ndarray, int]] = []
    width = 1
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim == 1:
            rows, ndim = arr.reshape(1, -1), 1
        elif arr.ndim == 2:
            rows, ndim = arr, 2
        else:
            raise DataError(f"save_params: tensor {name} has rank {arr.ndim} > 2")
        prepared.append((name, rows, ndim))
        width = max(width, rows.shape[1])

    out_rows = []
    records = []
    for name, rows, ndim in prepared:
        r, c = rows.shape
        for i in range(r):
            padded = np.zeros(width, dtype=np.float64)
            padded[:c] = rows[i]
            out_rows.append(padded)
            records.append(
                {
                    "id": f"{name}[{i}]",
                    "kind": KIND_PARAM,
                    "tensor": name,
                    "row": i,
                    "rows": r,
                    "len": c,
                    "ndim": ndim,
                }
            )
    write_qemb(path, np.stack(out_rows), records)


def load_params(path: str) -> dict[str, np.ndarray]:
    """Inverse of save_params (values as float32-precision float64 arrays)."""
    vectors, records = read_qemb(path)
    grouped: dict[str, dict] = {}
    for vec, rec in zip(vectors, records):
        if rec.get("kind") != KIND_PARAM:
            raise DataError(f"load_params: non-param record {rec.get('id')!r}")
        for key in ("tensor", "row", "rows", "len", "ndim"):
            if key not in rec:
                raise DataError(f"load_params: record {rec['id']!r} missing {key}")
        slot = grouped.setdefault(
            rec["tensor"], {"rows": rec["rows"], "len": rec["len"], "ndim": rec["ndim"], "data": {}}
        )
        if rec["row"] in slot["data"]:
            raise DataError(f"load_params: duplicate row {rec['row']} in {rec['tensor']}")
        slot["data"][rec["row"]] = vec[: rec["len"]].astype(np.float64)

    tensors: dict[str, np.ndarray] = {}
    for name, slot in grouped.items():
        if sorted(slot["data"]) != list(range(slot["rows"])):
            raise DataError(f"load_params: missing rows for tensor {name}")
        stacked = np.stack([slot["data"][i] for i in range(slot["rows"])])
        tensors[name] = stacked[0] if slot["ndim"] == 1 else stacked
    return tensors
