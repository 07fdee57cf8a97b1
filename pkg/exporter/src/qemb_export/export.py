"""Manifest-driven embedding export.

One manifest describes one output corpus: where the sources come from
(inline list or a one-per-line file), what they are (knowledge texts,
candidate labels, or image files), which encoder to run, the embedding
width, and where the .qemb pair lands. Row i of the output always
corresponds to source i, and rerunning an identical manifest reproduces
the sidecar bitwise and the vectors to within encoder tolerance.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encoders import load_encoder
from .errors import ConfigError, DataError
from .writer import sidecar_path, write_qemb

KIND_TEXT = "text"
KIND_OWK = "owk"
KIND_LABEL = "label"
KIND_IMAGE = "image"
SOURCE_KINDS = (KIND_TEXT, KIND_OWK, KIND_LABEL, KIND_IMAGE)

_RECORD_KIND = {
    KIND_TEXT: "text",
    KIND_OWK: "owk",
    KIND_LABEL: "label",
    KIND_IMAGE: "image_view",
}
_ID_PREFIX = {
    KIND_TEXT: "text",
    KIND_OWK: "owk",
    KIND_LABEL: "label",
    KIND_IMAGE: "img",
}


@dataclass(frozen=True)
class ExportManifest:
    """Everything one export needs; unknown or conflicting fields are rejected."""

    output: str
    encoder: str = "hashed-v1"
    dimension: int = 64
    normalize: bool = False
    kind: str = KIND_TEXT
    sources: Optional[tuple[str, ...]] = None
    source_file: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("manifest: output path is required")
        if not isinstance(self.encoder, str) or not self.encoder:
            raise ConfigError("manifest: encoder identifier is required")
        if isinstance(self.dimension, bool) or not isinstance(self.dimension, int):
            raise ConfigError("manifest: dimension must be an integer")
        if self.dimension < 1:
            raise ConfigError("manifest: dimension must be >= 1")
        if not isinstance(self.normalize, bool):
            raise ConfigError("manifest: normalize must be true or false")
        if self.kind not in SOURCE_KINDS:
            raise ConfigError(
                f"manifest: kind must be one of {SOURCE_KINDS}, got {self.kind!r}"
            )
        if self.sources is not None and self.source_file is not None:
            raise ConfigError("manifest: give sources or source_file, not both")
        if self.sources is None and self.source_file is None:
            raise ConfigError("manifest: give sources or source_file")
        if self.sources is not None:
            object.__setattr__(self, "sources", tuple(str(s) for s in self.sources))


def load_manifest(path: str) -> ExportManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"manifest {path} must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExportManifest)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"manifest {path}: unknown fields {unknown}")
    if isinstance(data.get("sources"), list):
        data["sources"] = tuple(data["sources"])
    return ExportManifest(**data)


def resolve_sources(manifest: ExportManifest) -> list[str]:
    """Inline sources verbatim, or the source file split into lines."""
    if manifest.sources is not None:
        return list(manifest.sources)
    try:
        with open(manifest.source_file, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"unreadable source file {manifest.source_file}: {exc}") from exc


@dataclass(frozen=True)
class ExportResult:
    output: str
    sidecar: str
    rows: int
    dimension: int
    encoder: str
    kind: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _read_image(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"unreadable source {path!r}: {exc}") from exc


def _build_records(manifest: ExportManifest, sources: list[str]) -> list[dict]:
    kind = _RECORD_KIND[manifest.kind]
    prefix = _ID_PREFIX[manifest.kind]
    records = []
    for i, source in enumerate(sources):
        rec = {
            "id": f"{prefix}{i:06d}",
            "kind": kind,
            "encoder": manifest.encoder,
            "normalize": manifest.normalize,
        }
        if manifest.kind == KIND_LABEL:
            rec["label_text"] = source
        elif manifest.kind == KIND_IMAGE:
            rec["source"] = source
        else:
            rec["text_ref"] = source
        records.append(rec)
    return records


def export_embeddings(manifest: ExportManifest) -> ExportResult:
    """Encode every source row and write the .qemb pair, in source order."""
    encoder = load_encoder(manifest.encoder)
    if encoder.dimension is not None and encoder.dimension != manifest.dimension:
        raise ConfigError(
            f"manifest dimension {manifest.dimension} does not match encoder "
            f"{manifest.encoder!r} width {encoder.dimension}"
        )
    sources = resolve_sources(manifest)
    if manifest.kind == KIND_IMAGE:
        vectors = encoder.encode_images([_read_image(p) for p in sources], manifest.dimension)
    else:
        vectors = encoder.encode_texts(sources, manifest.dimension)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape != (len(sources), manifest.dimension):
        raise DataError(
            f"encoder {manifest.encoder!r} returned shape {vectors.shape} for "
            f"{len(sources)} sources of width {manifest.dimension}"
        )

    out_dir = os.path.dirname(manifest.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    write_qemb(manifest.output, vectors, _build_records(manifest, sources))
    return ExportResult(
        output=str(manifest.output),
        sidecar=sidecar_path(manifest.output),
        rows=len(sources),
        dimension=manifest.dimension,
        encoder=manifest.encoder,
        kind=manifest.kind,
    )
