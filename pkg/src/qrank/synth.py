"""Deterministic synthetic corpora for desk-scale experiments.

Every label gets an anchor direction (orthonormal when the dimension allows).
Each item draws a private bridge direction orthogonal to all anchors; its
image base mixes label anchor, bridge, and noise, and its matching knowledge
entry mixes the same bridge with its own label/noise budget. The bridge is
what lets retrieval pair an image with its knowledge entry even when the
image itself carries no label signal, so the two signal dials independently
control how much the vision path and the knowledge path know about the label.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import (
    KIND_IMAGE_VIEW,
    KIND_LABEL,
    KIND_OWK,
    sidecar_path,
    write_qemb,
)
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    """Size and signal dials for one generated corpus triple."""

    items: int = 20
    labels: int = 4
    dim: int = 16
    owk_size: int = 40
    view_signal: float = 1.0  # label anchor weight inside image bases
    knowledge_signal: float = 1.0  # label anchor weight inside knowledge entries
    bridge: float = 1.0  # shared image<->knowledge pairing weight
    noise: float = 0.25

    def __post_init__(self) -> None:
        if self.items < 1 or self.labels < 1 or self.owk_size < 1:
            raise ConfigError("SyntheticSpec: counts must be positive")
        if self.dim < 4:
            raise ConfigError("SyntheticSpec: dim must be >= 4")
        for name in ("view_signal", "knowledge_signal", "bridge", "noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"SyntheticSpec: {name} must be >= 0")
        if self.view_signal == self.knowledge_signal == self.bridge == 0:
            raise ConfigError("SyntheticSpec: all signal dials zero")


def _label_text(i: int) -> str:
    # fine -> coarse components; coarse levels shared across neighboring labels
    return f"city{i}, country{i // 2}, continent{i // 4}"


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def _anchors(rng: np.random.Generator, labels: int, dim: int) -> np.ndarray:
    if labels <= dim:
        q = np.linalg.qr(rng.normal(size=(dim, dim)))[0]
        return q[:labels]
    rows = rng.normal(size=(labels, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _orthogonal_bridge(rng: np.random.Generator, anchors: np.ndarray) -> np.ndarray:
    """Unit direction orthogonal to every anchor (falls back to raw random
    when the anchors already span the space)."""
    raw = rng.normal(size=anchors.shape[1])
    if anchors.shape[0] < anchors.shape[1]:
        raw = raw - anchors.T @ (anchors @ raw)
    norm = np.linalg.norm(raw)
    if norm <= 1e-12:  # astronomically unlikely; redraw deterministically
        return _orthogonal_bridge(rng, anchors)
    return raw / norm


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir: str) -> dict[str, str]:
    """Write bases/labels/owk `.qemb` triples; bitwise stable given seed.

    Knowledge entry j < items pairs with item j through a shared bridge
    direction; remaining entries are pure-noise distractors. Sidecar records
    carry the planted composition of every row.
    """
    rng = np.random.default_rng([int(seed), 4])
    os.makedirs(out_dir, exist_ok=True)

    anchors = _anchors(rng, spec.labels, spec.dim)
    label_texts = [_label_text(i) for i in range(spec.labels)]
    gt_idx = rng.integers(0, spec.labels, size=spec.items)
    bridges = np.stack([_orthogonal_bridge(rng, anchors) for _ in range(spec.items)])

    planted_common = {"seed": int(seed), **asdict(spec)}

    base_rows = np.empty((spec.items, spec.dim), dtype=np.float64)
    base_records = []
    for i in range(spec.items):
        eps = _unit(rng.normal(size=spec.dim))  # unit norm: dials share one scale
        base_rows[i] = _unit(
            spec.view_signal * anchors[gt_idx[i]]
            + spec.bridge * bridges[i]
            + spec.noise * eps
        )
        base_records.append(
            {
                "id": f"item{i:05d}",
                "kind": KIND_IMAGE_VIEW,
                "label_text": label_texts[gt_idx[i]],
                "planted": {"signal": spec.view_signal, "bridge": i, "noise": spec.noise},
            }
        )

    owk_rows = np.empty((spec.owk_size, spec.dim), dtype=np.float64)
    owk_records = []
    for j in range(spec.owk_size):
        if j < spec.items:
            eps = _unit(rng.normal(size=spec.dim))
            owk_rows[j] = _unit(
                spec.knowledge_signal * anchors[gt_idx[j]]
                + spec.bridge * bridges[j]
                + spec.noise * eps
            )
            ref = f"knowledge for item{j:05d} ({label_texts[gt_idx[j]]})"
            planted = {"signal": spec.knowledge_signal, "bridge": j, "noise": spec.noise}
        else:
            owk_rows[j] = _unit(rng.normal(size=spec.dim))
            ref = f"distractor {j}"
            planted = {"signal": 0.0, "bridge": None, "noise": 1.0}
        owk_records.append(
            {"id": f"owk{j:05d}", "kind": KIND_OWK, "text_ref": ref, "planted": planted}
        )

    label_records = [
        {
            "id": f"label{i:05d}",
            "kind": KIND_LABEL,
            "label_text": text,
            "planted": planted_common,
        }
        for i, text in enumerate(label_texts)
    ]

    paths = {
        "bases": os.path.join(out_dir, "bases.qemb"),
        "labels": os.path.join(out_dir, "labels.qemb"),
        "owk": os.path.join(out_dir, "owk.qemb"),
    }
    write_qemb(paths["bases"], base_rows.astype(np.float32), base_records)
    write_qemb(paths["labels"], anchors.astype(np.float32), label_records)
    write_qemb(paths["owk"], owk_rows.astype(np.float32), owk_records)
    return paths


def planted_metadata(path: str) -> list[dict]:
    """The per-row planted-signal records a generated sidecar documents."""
    out = []
    with open(sidecar_path(path), "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(rec.get("planted"))
    return out
