"""Relevance scoring and fusion of view + knowledge embeddings.

A small two-layer MLP (ReLU hidden, sigmoid output) maps any embedding to a
scalar weight in (0, 1). Fusion sums weight * embedding over all views and
their retrieved knowledge entries; the label ranking compares that fused
vector against the candidate space. Training reuses the local/global
contrastive recipe with the per-view fused components as queries, and its
gradients flow only into the MLP: view and knowledge embeddings are inputs,
never parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import KnowledgeCorpus, LabelSpace
from .errors import ConfigError, DataError, NumericError
from .losses import (
    DEFAULT_LAMBDA,
    DEFAULT_TEMPERATURE,
    dynamic_weights,
    global_loss,
    local_loss,
)
from .retrieval import MODE_PROPOSED, MODES, search_owk_per_view
from .validation import as_matrix, as_vector
from .views import (
    DEFAULT_LEARNING_RATE,
    ViewHeadParams,
    _match_rows,
    _project_all,
    _unique_rows,
)


def default_hidden_width(dim: int) -> int:
    return max(8, dim // 2)


@dataclass
class ScorerParams:
    """Two-layer MLP weights: (d x h) + (h,) then (h,) + scalar bias."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray  # shape (1,)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(1)
        if self.w1.ndim != 2:
            raise DataError("ScorerParams: w1 must be (dim, hidden)")
        d, h = self.w1.shape
        if h < 1:
            raise DataError("ScorerParams: hidden width must be >= 1")
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise DataError("ScorerParams: layer shape mismatch")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise NumericError("ScorerParams: non-finite parameters")

    @property
    def dimension(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {"l1.W": self.w1, "l1.b": self.b1, "l2.w": self.w2, "l2.b": self.b2}

    @staticmethod
    def from_tensors(tensors: dict[str, np.ndarray]) -> "ScorerParams":
        try:
            return ScorerParams(tensors["l1.W"], tensors["l1.b"], tensors["l2.w"], tensors["l2.b"])
        except KeyError as exc:
            raise DataError(f"ScorerParams: missing tensor {exc}") from exc

    @staticmethod
    def zeros(dim: int, hidden: Optional[int] = None) -> "ScorerParams":
        h = hidden or default_hidden_width(dim)
        return ScorerParams(np.zeros((dim, h)), np.zeros(h), np.zeros(h), np.zeros(1))


def init_scorer_params(dim: int, seed: int, hidden: Optional[int] = None) -> ScorerParams:
    if dim < 1:
        raise ConfigError("init_scorer_params: dim must be >= 1")
    h = hidden or default_hidden_width(dim)
    rng = np.random.default_rng([int(seed), 2])
    return ScorerParams(
        rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, h)),
        np.zeros(h),
        rng.normal(scale=1.0 / np.sqrt(h), size=h),
        np.zeros(1),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _mlp_forward(inputs: np.ndarray, params: ScorerParams):
    """Batched weights for (m, d) inputs; returns (weights, backprop cache)."""
    z1 = inputs @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2[0]
    s = _sigmoid(z2)
    return s, (inputs, z1, a1, s)


def _mlp_backward(d_s: np.ndarray, cache, params: ScorerParams) -> dict[str, np.ndarray]:
    """Gradients of sum(d_s * s(inputs)) w.r.t. the MLP parameters."""
    inputs, z1, a1, s = cache
    dz2 = d_s * s * (1.0 - s)
    dw2 = a1.T @ dz2
    db2 = np.array([dz2.sum()])
    dz1 = np.outer(dz2, params.w2) * (z1 > 0)
    return {"w1": inputs.T @ dz1, "b1": dz1.sum(axis=0), "w2": dw2, "b2": db2}


def score_embedding(x: np.ndarray, params: ScorerParams) -> float:
    """Relevance weight sigma(l2(relu(l1(x)))) in (0, 1); pure/deterministic."""
    v = as_vector(x, "embedding")
    if v.shape[0] != params.dimension:
        raise DataError("score_embedding: dimension mismatch")
    s, _ = _mlp_forward(v[None, :], params)
    return float(s[0])


def score_embeddings(rows: np.ndarray, params: ScorerParams) -> np.ndarray:
    rows = as_matrix(rows, "embeddings")
    if rows.shape[1] != params.dimension:
        raise DataError("score_embeddings: dimension mismatch")
    s, _ = _mlp_forward(rows, params)
    return s


@dataclass
class FusedFeature:
    """Weighted sum of view and knowledge embeddings plus its ingredients."""

    vector: np.ndarray  # (d,)
    weights_v: np.ndarray  # (n,)
    weights_owk: np.ndarray  # (n,)
    views: np.ndarray  # (n, d)
    owk: np.ndarray  # (n, d)

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        self.views = as_matrix(self.views, "views")
        self.owk = as_matrix(self.owk, "owk")
        self.weights_v = as_vector(self.weights_v, "weights_v")
        self.weights_owk = as_vector(self.weights_owk, "weights_owk")
        n = self.views.shape[0]
        if self.owk.shape != self.views.shape:
            raise DataError("FusedFeature: views/owk shape mismatch")
        if self.weights_v.shape != (n,) or self.weights_owk.shape != (n,):
            raise DataError("FusedFeature: weight count mismatch")
        expect = self.components().sum(axis=0)
        if not np.allclose(self.vector, expect, atol=1e-9):
            raise DataError("FusedFeature: vector != weighted sum of inputs")

    @property
    def n(self) -> int:
        return self.views.shape[0]

    def components(self) -> np.ndarray:
        """Per-view fused components q_i = W_i^owk owk_i + W_i^v view_i."""
        return (
            self.weights_owk[:, None] * self.owk + self.weights_v[:, None] * self.views
        )


def fuse(views: np.ndarray, owk: np.ndarray, params: ScorerParams) -> FusedFeature:
    """Score every embedding and build the fused feature."""
    v = as_matrix(views, "views")
    o = as_matrix(owk, "owk")
    if v.shape != o.shape:
        raise DataError("fuse: one knowledge entry per view required")
    if v.shape[1] != params.dimension:
        raise DataError("fuse: dimension mismatch")
    weights_v = score_embeddings(v, params)
    weights_owk = score_embeddings(o, params)
    vector = (weights_owk[:, None] * o + weights_v[:, None] * v).sum(axis=0)
    return FusedFeature(vector, weights_v, weights_owk, v, o)


@dataclass
class ScorerGrads:
    """Gradients w.r.t. the MLP only: embeddings are frozen by construction."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def scorer_loss(
    fused: FusedFeature,
    gt: np.ndarray,
    negatives: np.ndarray,
    params: ScorerParams,
    weights: Optional[np.ndarray] = None,
    lam: float = DEFAULT_LAMBDA,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[float, ScorerGrads]:
    """Local + global contrastive loss over the per-view fused components.

    Each component q_i = W_i^owk owk_i + W_i^v view_i is scored against the
    ground-truth feature and the negatives, aggregated exactly like the
    view-head loss (weighted per-view terms + diversity penalty + mean-score
    term). Returned gradients cover only ScorerParams.
    """
    gt = as_vector(gt, "gt")
    negs = as_matrix(negatives, "negatives")
    n = fused.n
    w = np.full(n, 1.0 / n) if weights is None else as_vector(weights, "weights")

    components = fused.components()
    l_loc, g_loc = local_loss(components, gt, negs, w, lam, temperature)
    l_glo, g_glo = global_loss(components, gt, negs, temperature)
    g_components = g_loc.views + g_glo.views  # (n, d)

    # dL/d s(owk_i) = g_i . owk_i and dL/d s(view_i) = g_i . view_i; the MLP
    # sees the 2n embeddings as one batch: [owk_0..owk_{n-1}, view_0..view_{n-1}]
    stacked = np.vstack([fused.owk, fused.views])
    d_s = np.concatenate(
        [
            np.sum(g_components * fused.owk, axis=1),
            np.sum(g_components * fused.views, axis=1),
        ]
    )
    _, cache = _mlp_forward(stacked, params)
    grads = _mlp_backward(d_s, cache, params)
    return l_loc + l_glo, ScorerGrads(grads["w1"], grads["b1"], grads["w2"], grads["b2"])


def rank_labels_fused(
    fused: FusedFeature | np.ndarray,
    labels: LabelSpace,
    normalize: bool = False,
) -> list[tuple[str, float]]:
    """Inner-product label ranking of the fused vector, index tie-break.

    The fused vector is compared unnormalized by default; normalize=True
    rescales it to unit norm first (ordering-preserving, recorded option).
    """
    vec = fused.vector if isinstance(fused, FusedFeature) else as_vector(fused, "fused")
    if labels.count == 0:
        raise DataError("rank_labels_fused: empty label space")
    if labels.dimension != vec.shape[0]:
        raise DataError("rank_labels_fused: dimension mismatch")
    if normalize:
        norm = float(np.linalg.norm(vec))
        if norm <= 1e-12:
            raise NumericError("rank_labels_fused: zero fused vector")
        vec = vec / norm
    scores = labels.vectors.astype(np.float64) @ vec
    order = np.lexsort((np.arange(scores.size), -scores))
    return [(labels.labels[i], float(scores[i])) for i in order]


@dataclass
class ScorerTrainConfig:
    seed: int
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = 10
    batch_size: int = 32
    mvr_weight: float = DEFAULT_LAMBDA
    temperature: float = DEFAULT_TEMPERATURE
    hidden: Optional[int] = None
    mode: str = MODE_PROPOSED

    def __post_init__(self) -> None:
        if self.seed is None:
            raise ConfigError("ScorerTrainConfig: seed is mandatory")
        if self.learning_rate <= 0:
            raise ConfigError("ScorerTrainConfig: learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("ScorerTrainConfig: epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("ScorerTrainConfig: batch_size must be >= 2")
        if self.mvr_weight < 0:
            raise ConfigError("ScorerTrainConfig: mvr_weight must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("ScorerTrainConfig: temperature must be > 0")
        if str(self.mode).lower() not in MODES:
            raise ConfigError(f"ScorerTrainConfig: bad mode {self.mode!r}")


def train_scorer_on_features(
    views_all: np.ndarray,
    owk_all: np.ndarray,
    gt_texts: np.ndarray,
    config: ScorerTrainConfig,
    candidates: Optional[np.ndarray] = None,
) -> tuple[ScorerParams, list[dict]]:
    """SGD on scorer_loss over precomputed (N, n, d) view and knowledge stacks.

    View/knowledge embeddings stay frozen; only the MLP updates. Per-view
    dynamic weights refresh each epoch from the fused components' Rank@1
    (uniform on the first epoch). Deterministic given config.seed.
    """
    views_all = np.asarray(views_all, dtype=np.float64)
    owk_all = np.asarray(owk_all, dtype=np.float64)
    y = as_matrix(gt_texts, "gt_texts")
    if views_all.ndim != 3 or owk_all.shape != views_all.shape:
        raise DataError("train_scorer: views/owk must both be (N, n, d)")
    n_items, n_views, dim = views_all.shape
    if y.shape != (n_items, dim):
        raise DataError("train_scorer: gt_texts must be (N, d)")
    if n_items == 0:
        raise DataError("train_scorer: empty dataset")

    cand, gt_index = _unique_rows(y)
    if candidates is not None:
        cand = as_matrix(candidates, "candidates")
        gt_index = _match_rows(y, cand, "gt_texts")

    params = init_scorer_params(dim, config.seed, config.hidden)
    acc = np.zeros(n_views)
    log: list[dict] = []

    for epoch in range(config.epochs):
        order = np.random.default_rng([int(config.seed), 3, epoch]).permutation(n_items)
        w = dynamic_weights(acc)
        loss_sum = 0.0
        batches = 0
        skipped = 0
        for start in range(0, n_items, config.batch_size):
            batch = order[start : start + config.batch_size]
            if batch.size < 2:
                skipped += int(batch.size)
                continue
            g = {name: 0.0 for name in ("w1", "b1", "w2", "b2")}
            batch_loss = 0.0
            contributing = 0
            for idx in batch:
                neg_mask = gt_index[batch] != gt_index[idx]
                if not np.any(neg_mask):
                    skipped += 1
                    continue
                fused = fuse(views_all[idx], owk_all[idx], params)
                loss, grads = scorer_loss(
                    fused, y[idx], y[batch[neg_mask]], params, w,
                    config.mvr_weight, config.temperature,
                )
                for name in g:
                    g[name] = g[name] + getattr(grads, name)
                batch_loss += loss
                contributing += 1
            if contributing == 0:
                continue
            if not np.isfinite(batch_loss):
                raise NumericError(f"train_scorer: non-finite loss at epoch {epoch}")
            scale = config.learning_rate / contributing
            params = ScorerParams(
                params.w1 - scale * g["w1"],
                params.b1 - scale * g["b1"],
                params.w2 - scale * g["w2"],
                params.b2 - scale * g["b2"],
            )
            loss_sum += batch_loss / contributing
            batches += 1

        acc, rank1 = _scorer_epoch_metrics(views_all, owk_all, params, cand, gt_index)
        record = {
            "epoch": epoch,
            "loss": loss_sum / max(batches, 1),
            "fused_rank1": rank1,
            "view_acc": [float(a) for a in acc],
            "skipped_items": skipped,
        }
        if not np.isfinite(record["loss"]):
            raise NumericError(f"train_scorer: non-finite loss at epoch {epoch}")
        log.append(record)

    return params, log


def _scorer_epoch_metrics(views_all, owk_all, params, cand, gt_index):
    """Per-view component Rank@1 (for dynamic weights) and fused Rank@1."""
    n_items, n_views, _ = views_all.shape
    comp_hits = np.zeros(n_views)
    fused_hits = 0
    for idx in range(n_items):
        fused = fuse(views_all[idx], owk_all[idx], params)
        comps = fused.components()
        scores = comps @ cand.T  # (n, L)
        comp_hits += np.argmax(scores, axis=1) == gt_index[idx]
        fused_hits += int(np.argmax(cand @ fused.vector) == gt_index[idx])
    return comp_hits / n_items, fused_hits / n_items


def train_scorer(
    bases: np.ndarray,
    gt_texts: np.ndarray,
    corpus: KnowledgeCorpus,
    view_params: ViewHeadParams,
    config: ScorerTrainConfig,
    candidates: Optional[np.ndarray] = None,
) -> tuple[ScorerParams, list[dict]]:
    """Project bases through the frozen view head, retrieve per-view knowledge
    under config.mode, then fit the scorer on those frozen features."""
    x = as_matrix(bases, "bases")
    views_all = _project_all(x, view_params)
    owk_all = np.stack(
        [
            _owk_rows(search_owk_per_view(views_all[i], corpus, config.mode), corpus)
            for i in range(x.shape[0])
        ]
    )
    return train_scorer_on_features(views_all, owk_all, gt_texts, config, candidates)


def _owk_rows(result, corpus: KnowledgeCorpus) -> np.ndarray:
    index = {eid: i for i, eid in enumerate(corpus.entry_ids)}
    return corpus.vectors[[index[eid] for eid in result.entry_ids]].astype(np.float64)


class RelevanceScorer(BaseEstimator):
    """sklearn-style wrapper around scorer training and fused ranking."""

    def __init__(
        self,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        epochs: int = 10,
        batch_size: int = 32,
        mvr_weight: float = DEFAULT_LAMBDA,
        temperature: float = DEFAULT_TEMPERATURE,
        hidden: Optional[int] = None,
        mode: str = MODE_PROPOSED,
        normalize_fused: bool = False,
        random_state: int = 0,
    ):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.mvr_weight = mvr_weight
        self.temperature = temperature
        self.hidden = hidden
        self.mode = mode
        self.normalize_fused = normalize_fused
        self.random_state = random_state

    def _config(self) -> ScorerTrainConfig:
        return ScorerTrainConfig(
            seed=self.random_state,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            mvr_weight=self.mvr_weight,
            temperature=self.temperature,
            hidden=self.hidden,
            mode=self.mode,
        )

    def fit(self, views_all, owk_all, y, candidates: Optional[np.ndarray] = None):
        params, log = train_scorer_on_features(views_all, owk_all, y, self._config(), candidates)
        self.params_ = params
        self.history_ = log
        self.n_features_in_ = params.dimension
        return self

    def fuse_items(self, views_all, owk_all) -> list[FusedFeature]:
        self._check_fitted()
        return [fuse(v, o, self.params_) for v, o in zip(views_all, owk_all)]

    def predict(self, views_all, owk_all, labels: LabelSpace) -> list[list[tuple[str, float]]]:
        return [
            rank_labels_fused(f, labels, self.normalize_fused)
            for f in self.fuse_items(views_all, owk_all)
        ]

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise DataError("RelevanceScorer: call fit before predicting")
