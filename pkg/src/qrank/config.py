"""Run configuration: one JSON file, dotted-key overrides, strict validation.

A run is fully described by a single JSON document; every CLI flag maps to
one dotted key path inside it (`--views.epochs 30` edits views.epochs), so
the resolved config is itself a reproducibility artifact.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError
from .losses import DEFAULT_LAMBDA, DEFAULT_TEMPERATURE
from .retrieval import MODE_PROPOSED, MODES
from .views import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_INIT_SIGMA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_N_VIEWS,
)


@dataclass
class PathSettings:
    bases: str = ""
    labels: str = ""
    owk: str = ""
    out_dir: str = ""


@dataclass
class ViewSettings:
    n_views: int = DEFAULT_N_VIEWS
    mvr_weight: float = DEFAULT_LAMBDA
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 10
    batch_size: int = DEFAULT_BATCH_SIZE
    init_sigma: float = DEFAULT_INIT_SIGMA
    temperature: float = DEFAULT_TEMPERATURE


@dataclass
class ScorerSettings:
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 10
    batch_size: int = DEFAULT_BATCH_SIZE
    mvr_weight: float = DEFAULT_LAMBDA
    temperature: float = DEFAULT_TEMPERATURE
    hidden: Optional[int] = None


@dataclass
class SearchSettings:
    mode: str = MODE_PROPOSED
    threads: Optional[int] = None


@dataclass
class RunConfig:
    seed: int
    paths: PathSettings = field(default_factory=PathSettings)
    views: ViewSettings = field(default_factory=ViewSettings)
    scorer: ScorerSettings = field(default_factory=ScorerSettings)
    search: SearchSettings = field(default_factory=SearchSettings)
    normalize: bool = True  # L2-normalize all embeddings at ingestion
    fused_normalize: bool = False

    def __post_init__(self) -> None:
        if self.seed is None:
            raise ConfigError("RunConfig: seed is mandatory (no entropy-seeded runs)")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("RunConfig: seed must be an integer")
        if self.views.n_views < 2:
            raise ConfigError("RunConfig: views.n_views must be >= 2")
        if self.views.mvr_weight < 0 or self.scorer.mvr_weight < 0:
            raise ConfigError("RunConfig: mvr_weight must be >= 0")
        if str(self.search.mode).lower() not in MODES:
            raise ConfigError(f"RunConfig: search.mode must be one of {MODES}")
        self.search.mode = str(self.search.mode).lower()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def semantic_dict(self) -> dict:
        """Config content that affects results: everything except file paths."""
        data = self.to_dict()
        data.pop("paths")
        data["search"].pop("threads")  # thread count never changes outputs
        return data

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("RunConfig: config root must be a JSON object")
        if "seed" not in data:
            raise ConfigError("RunConfig: seed is mandatory (no entropy-seeded runs)")
        return _build_dataclass(RunConfig, data, "")


_NESTED = {
    "paths": PathSettings,
    "views": ViewSettings,
    "scorer": ScorerSettings,
    "search": SearchSettings,
}


def _build_dataclass(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config: {prefix or 'root'} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        where = f"{prefix}." if prefix else ""
        raise ConfigError(f"config: unknown key {where}{sorted(unknown)[0]!r}")
    kwargs: dict[str, Any] = {}
    for name in known:
        if name not in data:
            continue
        value = data[name]
        if prefix == "" and name in _NESTED:
            kwargs[name] = _build_dataclass(_NESTED[name], value, name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc


def load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}") from exc


def coerce_override(raw: str) -> Any:
    """CLI override values parse as JSON when possible, else stay strings."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: dict[str, Any]) -> dict:
    """Set dotted key paths in a nested dict copy; creates missing objects."""
    out = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        if not dotted:
            raise ConfigError("config: empty override key")
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"config: override {dotted!r} crosses scalar {part!r}")
            node = nxt
        node[parts[-1]] = value
    return out


def resolve_config(
    path: Optional[str], overrides: dict[str, Any], defaults: Optional[dict] = None
) -> dict:
    data = dict(defaults or {})
    if path:
        data = load_config_file(path)
    return apply_overrides(data, overrides)
