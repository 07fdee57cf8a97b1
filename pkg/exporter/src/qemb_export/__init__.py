"""Embedding corpus exporter for the .qemb ranking-engine format."""

from .encoders import HashedEncoder, PretrainedClipEncoder, load_encoder
from .errors import ConfigError, DataError, ExportError
from .export import (
    ExportManifest,
    ExportResult,
    export_embeddings,
    load_manifest,
    resolve_sources,
)
from .writer import sidecar_path, write_qemb

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ExportError",
    "ExportManifest",
    "ExportResult",
    "HashedEncoder",
    "PretrainedClipEncoder",
    "export_embeddings",
    "load_encoder",
    "load_manifest",
    "resolve_sources",
    "sidecar_path",
    "write_qemb",
]
