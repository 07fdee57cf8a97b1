"""Contrastive losses with analytic gradients, written as pure functions.

Every function takes plain float arrays, accumulates in float64, and returns
(loss, gradients). Gradients cover every input the loss touches so they can
be finite-difference checked; callers decide which inputs actually train
(text keys stay frozen in this engine).

Score function is the bare inner product f(x, y) = x . y, optionally scaled
by 1/temperature (default 1.0, i.e. no scaling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .validation import as_matrix, as_vector, check_probability, check_same_dim

DEFAULT_LAMBDA = 0.1
DEFAULT_TEMPERATURE = 1.0


@dataclass
class MvcGrads:
    query: np.ndarray  # (d,)
    positive: np.ndarray  # (d,)
    negatives: np.ndarray  # (m, d)


@dataclass
class ViewLossGrads:
    views: np.ndarray  # (n, d)
    positive: np.ndarray  # (d,)
    negatives: np.ndarray  # (m, d)


def _softmax_nce(pos_score: float, neg_scores: np.ndarray) -> tuple[float, float, np.ndarray]:
    """InfoNCE over one positive score and m negative scores.

    Returns (loss, dloss/dpos_score, dloss/dneg_scores), computed via a
    max-shifted log-sum-exp so huge scores stay finite.
    """
    scores = np.concatenate(([pos_score], neg_scores))
    shift = float(np.max(scores))
    exp = np.exp(scores - shift)
    z = float(np.sum(exp))
    loss = float(np.log(z) + shift - pos_score)
    probs = exp / z
    return loss, float(probs[0] - 1.0), probs[1:]


def _check_keys(q_dim: int, positive: np.ndarray, negatives: np.ndarray) -> None:
    if negatives.shape[0] == 0:
        raise DataError("loss: at least one negative key required")
    if positive.shape[0] != q_dim or negatives.shape[1] != q_dim:
        raise DataError("loss: key dimension mismatch")


def mvc_loss(
    query: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[float, MvcGrads]:
    """Per-view contrastive loss of one query against its text keys.

    loss = -log( e^{f(q,k+)} / (e^{f(q,k+)} + sum_j e^{f(q,k-_j)}) )
    """
    q = as_vector(query, "query")
    pos = as_vector(positive, "positive")
    negs = as_matrix(negatives, "negatives")
    _check_keys(q.shape[0], pos, negs)
    if temperature <= 0:
        raise DataError("mvc_loss: temperature must be > 0")

    inv_t = 1.0 / temperature
    loss, dpos_s, dneg_s = _softmax_nce(float(q @ pos) * inv_t, (negs @ q) * inv_t)
    grads = MvcGrads(
        query=(dpos_s * pos + dneg_s @ negs) * inv_t,
        positive=dpos_s * q * inv_t,
        negatives=np.outer(dneg_s, q) * inv_t,
    )
    return loss, grads


def mvr_loss(views: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean pairwise cosine among the n views (the diversity penalty).

    loss = 2/(n(n-1)) * sum_{i<j} (q_i . q_j) / (|q_i| |q_j|), in [-1, 1].
    Returns the gradient w.r.t. every view, shape (n, d).
    """
    q = as_matrix(views, "views")
    n = q.shape[0]
    if n < 2:
        raise DataError("mvr_loss: needs n >= 2 views")
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms <= 1e-12):
        raise DataError("mvr_loss: zero-norm view")

    unit = q / norms[:, None]
    gram = unit @ unit.T
    coeff = 2.0 / (n * (n - 1))
    loss = float((gram.sum() - np.trace(gram)) / 2.0 * coeff)

    # d cos(q_i, q_j) / d q_i = q_j/(|q_i||q_j|) - cos_ij * q_i/|q_i|^2
    cos_rowsum = gram.sum(axis=1) - 1.0  # sum_{j != i} cos_ij
    grad = (unit.sum(axis=0)[None, :] - unit) / norms[:, None]
    grad -= cos_rowsum[:, None] * q / (norms**2)[:, None]
    return loss, grad * coeff


def dynamic_weights(acc: np.ndarray) -> np.ndarray:
    """Per-view weights w = softmax(1 - acc): lagging views get more weight."""
    acc = as_vector(acc, "acc")
    for a in acc:
        check_probability(float(a), "accuracy")
    scores = 1.0 - acc
    scores -= scores.max()
    exp = np.exp(scores)
    return exp / exp.sum()


def local_loss(
    views: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    weights: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[float, ViewLossGrads]:
    """Weighted per-view contrastive losses plus the diversity penalty.

    L_local = sum_i w_i * MVC(q_i) + lam * MVR(views)
    """
    q = as_matrix(views, "views")
    w = as_vector(weights, "weights")
    if w.shape[0] != q.shape[0]:
        raise DataError("local_loss: one weight per view required")
    if np.any(w < 0):
        raise DataError("local_loss: negative view weight")
    if lam < 0:
        raise DataError("local_loss: lam must be >= 0")

    total = 0.0
    g_views = np.zeros_like(q)
    g_pos = np.zeros(q.shape[1])
    g_negs = np.zeros_like(as_matrix(negatives, "negatives"))
    for i in range(q.shape[0]):
        loss_i, grads_i = mvc_loss(q[i], positive, negatives, temperature)
        total += w[i] * loss_i
        g_views[i] = w[i] * grads_i.query
        g_pos += w[i] * grads_i.positive
        g_negs += w[i] * grads_i.negatives
    if lam != 0.0:
        mvr, g_mvr = mvr_loss(q)
        total += lam * mvr
        g_views += lam * g_mvr
    return total, ViewLossGrads(g_views, g_pos, g_negs)


def global_loss(
    views: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[float, ViewLossGrads]:
    """Contrastive loss on the mean-over-views score.

    f_mean(views, k) = (1/n) sum_i f(q_i, k), then InfoNCE as in mvc_loss.
    """
    q = as_matrix(views, "views")
    pos = as_vector(positive, "positive")
    negs = as_matrix(negatives, "negatives")
    _check_keys(q.shape[1], pos, negs)
    if temperature <= 0:
        raise DataError("global_loss: temperature must be > 0")

    n = q.shape[0]
    inv_t = 1.0 / temperature
    mean_view = q.mean(axis=0)
    loss, dpos_s, dneg_s = _softmax_nce(float(mean_view @ pos) * inv_t, (negs @ mean_view) * inv_t)

    d_mean = (dpos_s * pos + dneg_s @ negs) * inv_t
    grads = ViewLossGrads(
        views=np.tile(d_mean / n, (n, 1)),
        positive=dpos_s * mean_view * inv_t,
        negatives=np.outer(dneg_s, mean_view) * inv_t,
    )
    return loss, grads


def total_loss(
    views: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    weights: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    temperature: float = DEFAULT_TEMPERATURE,
) -> tuple[float, ViewLossGrads]:
    """L_total = L_local + L_global, gradients summed likewise."""
    l_local, g_local = local_loss(views, positive, negatives, weights, lam, temperature)
    l_global, g_global = global_loss(views, positive, negatives, temperature)
    return l_local + l_global, ViewLossGrads(
        g_local.views + g_global.views,
        g_local.positive + g_global.positive,
        g_local.negatives + g_global.negatives,
    )
