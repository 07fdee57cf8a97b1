"""Embedding encoders behind one tiny interface.

Two families exist: a dependency-free hashed encoder that turns any byte
payload into a deterministic pseudo-embedding (enough to exercise every
downstream contract, and the default), and pretrained vision-language
encoders loaded on demand. The pretrained path needs heavyweight optional
packages; requesting it without them installed is a ConfigError, not a
crash, so manifests stay portable between machines.

Hashed vectors are intentionally unnormalized: downstream ingestion owns
the normalization policy.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError, DataError

HASHED_IDENTIFIER = "hashed-v1"
PRETRAINED_PREFIX = "clip:"


def _hash_features(payload: bytes, dim: int) -> np.ndarray:
    """Counter-mode SHA-256 expanded to dim floats in [-1, 1).

    Length-prefixing the payload keeps distinct byte strings from sharing
    a hash stream; big-endian lane decoding pins the output across
    platforms. No RNG is involved, so the mapping can never drift with
    library versions.
    """
    prefix = len(payload).to_bytes(8, "big") + payload
    lanes = []
    for counter in range((dim + 7) // 8):
        digest = hashlib.sha256(prefix + counter.to_bytes(4, "big")).digest()
        lanes.append(np.frombuffer(digest, dtype=">u4"))
    raw = np.concatenate(lanes)[:dim]
    return raw.astype(np.float64) / float(2**31) - 1.0


class HashedEncoder:
    """Deterministic stand-in encoder; width comes from the manifest."""

    identifier = HASHED_IDENTIFIER
    dimension: int | None = None  # parametric

    def encode_texts(self, texts: list[str], dim: int) -> np.ndarray:
        return self._encode([t.encode("utf-8") for t in texts], dim)

    def encode_images(self, blobs: list[bytes], dim: int) -> np.ndarray:
        return self._encode(list(blobs), dim)

    def _encode(self, payloads: list[bytes], dim: int) -> np.ndarray:
        if dim < 1:
            raise DataError("HashedEncoder: dimension must be >= 1")
        if not payloads:
            return np.zeros((0, dim), dtype=np.float64)
        return np.stack([_hash_features(p, dim) for p in payloads])


class PretrainedClipEncoder:
    """Thin wrapper over an open_clip model pair; built only when importable."""

    def __init__(self, model_name: str):
        import open_clip
        import torch

        self._torch = torch
        self.identifier = f"{PRETRAINED_PREFIX}{model_name}"
        self._model, _, self._preprocess = open_clip.create_model_and_transforms(model_name)
        self._tokenizer = open_clip.get_tokenizer(model_name)
        self._model.eval()
        self.dimension = int(self._model.text_projection.shape[1])

    def encode_texts(self, texts: list[str], dim: int) -> np.ndarray:
        if not texts:
            return np.zeros((0, dim), dtype=np.float64)
        with self._torch.no_grad():
            out = self._model.encode_text(self._tokenizer(texts))
        return out.cpu().numpy().astype(np.float64)

    def encode_images(self, blobs: list[bytes], dim: int) -> np.ndarray:
        import io

        from PIL import Image

        if not blobs:
            return np.zeros((0, dim), dtype=np.float64)
        batch = self._torch.stack(
            [self._preprocess(Image.open(io.BytesIO(b)).convert("RGB")) for b in blobs]
        )
        with self._torch.no_grad():
            out = self._model.encode_image(batch)
        return out.cpu().numpy().astype(np.float64)


def load_encoder(identifier: str):
    """Resolve an encoder identifier from a manifest.

    ``hashed-v1`` always works. ``clip:<model>`` requires open-clip-torch
    and torch; if they cannot be imported the manifest is rejected with an
    encoder load failure.
    """
    if identifier == HASHED_IDENTIFIER:
        return HashedEncoder()
    if identifier.startswith(PRETRAINED_PREFIX):
        model_name = identifier[len(PRETRAINED_PREFIX) :]
        if not model_name:
            raise ConfigError("encoder 'clip:' needs a model name after the colon")
        try:
            return PretrainedClipEncoder(model_name)
        except ImportError as exc:
            raise ConfigError(
                f"encoder {identifier!r} load failure: {exc}; install "
                f"open-clip-torch and torch, or use {HASHED_IDENTIFIER!r}"
            ) from exc
    raise ConfigError(f"unknown encoder {identifier!r}")
