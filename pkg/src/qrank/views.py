"""Trainable multi-view projection over frozen base embeddings.

Each of the n views is an affine map W_i x + b_i followed by L2
normalization, so every item yields n unit view vectors. The maps start
near the identity (per-view seeded Gaussian noise keeps them distinct) and
train with mini-batch SGD on the combined local + global contrastive loss;
text-side vectors stay frozen throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import LabelSpace, MultiViewEmbedding
from .errors import ConfigError, DataError, NumericError
from .losses import (
    DEFAULT_LAMBDA,
    DEFAULT_TEMPERATURE,
    dynamic_weights,
    global_loss,
    local_loss,
)
from .validation import as_matrix, as_vector
from .vectors import mean_pairwise_cosine

DEFAULT_N_VIEWS = 6
DEFAULT_INIT_SIGMA = 0.05
DEFAULT_LEARNING_RATE = 1e-6
DEFAULT_BATCH_SIZE = 32


@dataclass
class ViewHeadParams:
    """Per-view affine maps: weights (n, d, d) and biases (n, d), float64."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[1] != self.weights.shape[2]:
            raise DataError("ViewHeadParams: weights must be (n, d, d)")
        if self.biases.shape != self.weights.shape[:2]:
            raise DataError("ViewHeadParams: biases must be (n, d)")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NumericError("ViewHeadParams: non-finite parameters")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ViewHeadParams":
        return ViewHeadParams(self.weights.copy(), self.biases.copy())

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i in range(self.n):
            out[f"view{i}.W"] = self.weights[i]
            out[f"view{i}.b"] = self.biases[i]
        return out

    @staticmethod
    def from_tensors(tensors: dict[str, np.ndarray]) -> "ViewHeadParams":
        n = sum(1 for name in tensors if name.endswith(".W"))
        if n == 0:
            raise DataError("ViewHeadParams: no view tensors found")
        try:
            weights = np.stack([tensors[f"view{i}.W"] for i in range(n)])
            biases = np.stack([tensors[f"view{i}.b"] for i in range(n)])
        except KeyError as exc:
            raise DataError(f"ViewHeadParams: missing tensor {exc}") from exc
        return ViewHeadParams(weights, biases)


def init_view_params(
    n: int, dim: int, seed: int, sigma: float = DEFAULT_INIT_SIGMA
) -> ViewHeadParams:
    """Identity maps plus per-view-seeded Gaussian noise (keeps views distinct)."""
    if n < 2:
        raise ConfigError("init_view_params: n must be >= 2")
    if dim < 1:
        raise ConfigError("init_view_params: dim must be >= 1")
    if sigma < 0:
        raise ConfigError("init_view_params: sigma must be >= 0")
    weights = np.empty((n, dim, dim))
    for i in range(n):
        rng = np.random.default_rng([int(seed), i])
        weights[i] = np.eye(dim) + rng.normal(scale=sigma, size=(dim, dim))
    return ViewHeadParams(weights, np.zeros((n, dim)))


def _forward(base: np.ndarray, params: ViewHeadParams) -> tuple[np.ndarray, np.ndarray]:
    """Raw affine outputs and their norms for one item (pre-normalization)."""
    raw = params.weights @ base + params.biases
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms <= 1e-12):
        raise NumericError("project_views: view collapsed to zero norm")
    return raw, norms


def project_views(base: np.ndarray, params: ViewHeadParams) -> MultiViewEmbedding:
    """Project one base embedding into its n unit-norm views."""
    x = as_vector(base, "base")
    if x.shape[0] != params.dimension:
        raise DataError(
            f"project_views: base dim {x.shape[0]} != params dim {params.dimension}"
        )
    raw, norms = _forward(x, params)
    return MultiViewEmbedding("", raw / norms[:, None])


def _backward(
    g_views: np.ndarray, base: np.ndarray, raw: np.ndarray, norms: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Chain loss gradients w.r.t. normalized views back into (dW, db).

    For v = u/|u|: dL/du = (g - (g . v) v) / |u|, then dW_i = outer(dL/du_i, x).
    """
    unit = raw / norms[:, None]
    g_raw = (g_views - np.sum(g_views * unit, axis=1, keepdims=True) * unit) / norms[:, None]
    return g_raw[:, :, None] * base[None, None, :], g_raw


@dataclass
class ViewTrainConfig:
    seed: int  # mandatory: no entropy-seeded runs
    n_views: int = DEFAULT_N_VIEWS
    mvr_weight: float = DEFAULT_LAMBDA
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 10
    batch_size: int = DEFAULT_BATCH_SIZE
    temperature: float = DEFAULT_TEMPERATURE
    init_sigma: float = DEFAULT_INIT_SIGMA

    def __post_init__(self) -> None:
        if self.seed is None:
            raise ConfigError("ViewTrainConfig: seed is mandatory")
        if self.n_views < 2:
            raise ConfigError("ViewTrainConfig: n_views must be >= 2")
        if self.mvr_weight < 0:
            raise ConfigError("ViewTrainConfig: mvr_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("ViewTrainConfig: learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("ViewTrainConfig: epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("ViewTrainConfig: batch_size must be >= 2 (in-batch negatives)")
        if self.temperature <= 0:
            raise ConfigError("ViewTrainConfig: temperature must be > 0")


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First-occurrence unique rows and the per-row index into them."""
    seen: dict[bytes, int] = {}
    index = np.empty(rows.shape[0], dtype=np.int64)
    uniq = []
    for i, row in enumerate(rows):
        key = row.tobytes()
        if key not in seen:
            seen[key] = len(uniq)
            uniq.append(row)
        index[i] = seen[key]
    return np.stack(uniq), index


def _project_all(bases: np.ndarray, params: ViewHeadParams) -> np.ndarray:
    """(N, n, d) normalized views for every item."""
    raw = np.einsum("nij,bj->bni", params.weights, bases) + params.biases[None, :, :]
    norms = np.linalg.norm(raw, axis=2)
    if np.any(norms <= 1e-12):
        raise NumericError("project: view collapsed to zero norm")
    return raw / norms[:, :, None]


def per_view_rank1(
    views_all: np.ndarray, candidates: np.ndarray, gt_index: np.ndarray
) -> np.ndarray:
    """Per-view fraction of items whose own gt candidate scores highest.

    Ties resolve to the lowest candidate index, matching ranking elsewhere.
    """
    n = views_all.shape[1]
    acc = np.empty(n)
    for i in range(n):
        scores = views_all[:, i, :] @ candidates.T  # (N, L)
        best = np.argmax(scores, axis=1)  # argmax takes the first max: low index
        acc[i] = float(np.mean(best == gt_index))
    return acc


def train_view_head(
    bases: np.ndarray,
    gt_texts: np.ndarray,
    config: ViewTrainConfig,
    candidates: Optional[np.ndarray] = None,
) -> tuple[ViewHeadParams, list[dict]]:
    """Mini-batch SGD on L_local + L_global over (base, gt text) pairs.

    Per epoch: items are shuffled with an epoch-derived RNG, each item's
    negatives are the other distinct gt texts in its batch, per-view Rank@1
    on the training split refreshes the dynamic weights for the next epoch
    (the first epoch runs uniform). Returns final params plus one log record
    per epoch. Deterministic given config.seed.
    """
    x = as_matrix(bases, "bases")
    y = as_matrix(gt_texts, "gt_texts")
    if x.shape[0] != y.shape[0]:
        raise DataError("train_view_head: bases/gt_texts length mismatch")
    if x.shape[0] == 0:
        raise DataError("train_view_head: empty dataset")
    if x.shape[1] != y.shape[1]:
        raise DataError("train_view_head: base/text dimension mismatch")

    n_items, dim = x.shape
    cand, gt_index = _unique_rows(y)
    if candidates is not None:
        cand = as_matrix(candidates, "candidates")
        gt_index = _match_rows(y, cand, "gt_texts")

    params = init_view_params(config.n_views, dim, config.seed, config.init_sigma)
    acc = np.zeros(config.n_views)  # warm-up: uniform weights on epoch one
    log: list[dict] = []

    for epoch in range(config.epochs):
        order = np.random.default_rng([int(config.seed), 1, epoch]).permutation(n_items)
        w = dynamic_weights(acc)
        sum_local = sum_global = 0.0
        batches = 0
        skipped = 0

        for start in range(0, n_items, config.batch_size):
            batch = order[start : start + config.batch_size]
            if batch.size < 2:
                skipped += int(batch.size)
                continue
            g_w = np.zeros_like(params.weights)
            g_b = np.zeros_like(params.biases)
            batch_local = batch_global = 0.0
            contributing = 0
            for idx in batch:
                neg_mask = gt_index[batch] != gt_index[idx]
                if not np.any(neg_mask):
                    skipped += 1
                    continue
                negatives = y[batch[neg_mask]]
                raw, norms = _forward(x[idx], params)
                views = raw / norms[:, None]
                l_loc, g_loc = local_loss(
                    views, y[idx], negatives, w, config.mvr_weight, config.temperature
                )
                l_glo, g_glo = global_loss(views, y[idx], negatives, config.temperature)
                dW, db = _backward(g_loc.views + g_glo.views, x[idx], raw, norms)
                g_w += dW
                g_b += db
                batch_local += l_loc
                batch_global += l_glo
                contributing += 1
            if contributing == 0:
                continue
            if not (np.isfinite(batch_local) and np.isfinite(batch_global)):
                raise NumericError(f"train_view_head: non-finite loss at epoch {epoch}")
            scale = config.learning_rate / contributing
            params.weights -= scale * g_w
            params.biases -= scale * g_b
            sum_local += batch_local / contributing
            sum_global += batch_global / contributing
            batches += 1

        views_all = _project_all(x, params)
        acc = per_view_rank1(views_all, cand, gt_index)
        cosine = float(np.mean([mean_pairwise_cosine(v) for v in views_all]))
        denom = max(batches, 1)
        record = {
            "epoch": epoch,
            "total_loss": (sum_local + sum_global) / denom,
            "local_loss": sum_local / denom,
            "global_loss": sum_global / denom,
            "view_acc": [float(a) for a in acc],
            "mean_view_cosine": cosine,
            "skipped_items": skipped,
        }
        if not np.isfinite(record["total_loss"]):
            raise NumericError(f"train_view_head: non-finite loss at epoch {epoch}")
        log.append(record)

    return params, log


def _match_rows(rows: np.ndarray, candidates: np.ndarray, name: str) -> np.ndarray:
    lookup = {row.tobytes(): i for i, row in enumerate(candidates)}
    index = np.empty(rows.shape[0], dtype=np.int64)
    for i, row in enumerate(rows):
        key = row.tobytes()
        if key not in lookup:
            raise DataError(f"{name}: row {i} not present in candidates")
        index[i] = lookup[key]
    return index


def rank_labels_multiview(
    views: MultiViewEmbedding | np.ndarray, labels: LabelSpace
) -> list[tuple[str, float]]:
    """Rank labels by the mean inner product over views, descending.

    Ties break toward the lower label index so rankings are reproducible.
    """
    q = views.views if isinstance(views, MultiViewEmbedding) else as_matrix(views, "views")
    if labels.count == 0:
        raise DataError("rank_labels_multiview: empty label space")
    if labels.dimension != q.shape[1]:
        raise DataError("rank_labels_multiview: dimension mismatch")
    scores = labels.vectors.astype(np.float64) @ q.mean(axis=0)
    order = np.lexsort((np.arange(scores.size), -scores))
    return [(labels.labels[i], float(scores[i])) for i in order]


class MultiViewEncoder(TransformerMixin, BaseEstimator):
    """sklearn-style wrapper: fit the view head, transform bases to views.

    X is the (N, d) matrix of frozen base embeddings, y the matching (N, d)
    ground-truth text embeddings. After fit, transform(X) returns the
    (N, n_views, d) stack of unit view vectors.
    """

    def __init__(
        self,
        n_views: int = DEFAULT_N_VIEWS,
        mvr_weight: float = DEFAULT_LAMBDA,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        epochs: int = 10,
        batch_size: int = DEFAULT_BATCH_SIZE,
        temperature: float = DEFAULT_TEMPERATURE,
        init_sigma: float = DEFAULT_INIT_SIGMA,
        random_state: int = 0,
    ):
        self.n_views = n_views
        self.mvr_weight = mvr_weight
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.temperature = temperature
        self.init_sigma = init_sigma
        self.random_state = random_state

    def _config(self) -> ViewTrainConfig:
        return ViewTrainConfig(
            seed=self.random_state,
            n_views=self.n_views,
            mvr_weight=self.mvr_weight,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            temperature=self.temperature,
            init_sigma=self.init_sigma,
        )

    def fit(self, X, y, candidates: Optional[np.ndarray] = None):
        params, log = train_view_head(X, y, self._config(), candidates)
        self.params_ = params
        self.history_ = log
        self.n_features_in_ = params.dimension
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        x = as_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise DataError("transform: dimension mismatch with fitted params")
        return _project_all(x, self.params_)

    def rank_labels(self, X, labels: LabelSpace) -> list[list[tuple[str, float]]]:
        views_all = self.transform(X)
        return [rank_labels_multiview(v, labels) for v in views_all]

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise DataError("MultiViewEncoder: call fit before transform")
