"""Brute-force inner-product search over the knowledge corpus.

Scans are exact: scores are per-row float64 reductions, so partitioning the
corpus across threads cannot change any value, and ties always break toward
the lower corpus index. Per-partition top-k candidates are merged in
partition order, which keeps results identical for 1 or many threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import KnowledgeCorpus, MultiViewEmbedding
from .errors import ConfigError, DataError
from .validation import as_matrix, as_vector

MODE_PROPOSED = "proposed"
MODE_UNIFORM = "uniform"
MODE_DISTINCT = "distinct"
MODES = (MODE_PROPOSED, MODE_UNIFORM, MODE_DISTINCT)

THREADS_ENV = "QR_THREADS"


def resolve_thread_count(requested: int | None = None) -> int:
    """Requested worker count, capped by the QR_THREADS env var (default 1)."""
    cap = None
    raw = os.environ.get(THREADS_ENV)
    if raw is not None:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
    if requested is None:
        return cap or 1
    if requested < 1:
        raise ConfigError("thread count must be >= 1")
    return min(requested, cap) if cap else requested


def _row_scores(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    # per-row float64 reduction: value independent of how rows are chunked
    return np.add.reduce(rows.astype(np.float64) * query, axis=1)


def _partition_topk(
    vectors: np.ndarray, query: np.ndarray, k: int, start: int, stop: int
) -> list[tuple[int, float]]:
    scores = _row_scores(vectors[start:stop], query)
    idx = np.arange(start, stop)
    order = np.lexsort((idx, -scores))[:k]
    return [(int(idx[j]), float(scores[j])) for j in order]


def search_topk(
    query: np.ndarray,
    corpus: KnowledgeCorpus,
    k: int,
    threads: int | None = None,
) -> list[tuple[str, float]]:
    """Exact inner-product top-k: descending score, ties by ascending index."""
    q = as_vector(query, "query")
    if corpus.count == 0:
        raise DataError("search_topk: empty corpus")
    if q.shape[0] != corpus.dimension:
        raise DataError("search_topk: query dimension mismatch")
    if k < 1:
        raise DataError("search_topk: k must be >= 1")
    if k > corpus.count:
        raise DataError(f"search_topk: k={k} exceeds corpus size {corpus.count}")

    workers = resolve_thread_count(threads)
    bounds = np.linspace(0, corpus.count, num=min(workers, corpus.count) + 1, dtype=int)
    spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    if len(spans) == 1:
        candidates = _partition_topk(corpus.vectors, q, k, 0, corpus.count)
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            parts = pool.map(
                lambda span: _partition_topk(corpus.vectors, q, k, *span), spans
            )
            candidates = [hit for part in parts for hit in part]
    candidates.sort(key=lambda hit: (-hit[1], hit[0]))
    return [(corpus.entry_ids[i], score) for i, score in candidates[:k]]


@dataclass
class RetrievalResult:
    """Per-view retrieved knowledge entries for one item."""

    item_id: str
    mode: str
    entry_ids: list[str]
    scores: list[float]
    ranks: list[int]  # 1-based rank in that view's own full ordering

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"RetrievalResult: unknown mode {self.mode!r}")
        n = len(self.entry_ids)
        if n < 1 or len(self.scores) != n or len(self.ranks) != n:
            raise DataError("RetrievalResult: field length mismatch")
        distinct = len(set(self.entry_ids))
        if self.mode == MODE_UNIFORM and distinct != 1:
            raise DataError("RetrievalResult: uniform mode requires one shared entry")
        if self.mode == MODE_DISTINCT and distinct != n:
            raise DataError("RetrievalResult: distinct mode requires all-distinct entries")

    @property
    def n(self) -> int:
        return len(self.entry_ids)


def _ordering(scores: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(scores.size), -scores))


def _rank_of(scores: np.ndarray, index: int) -> int:
    s = scores[index]
    ahead = int(np.sum(scores > s)) + int(np.sum((scores == s) & (np.arange(scores.size) < index)))
    return ahead + 1


def search_owk_per_view(
    views: MultiViewEmbedding | np.ndarray,
    corpus: KnowledgeCorpus,
    mode: str = MODE_PROPOSED,
    item_id: str = "",
) -> RetrievalResult:
    """Retrieve one knowledge entry per view under the chosen search mode.

    proposed: each view independently takes its top-1 entry.
    uniform:  the single entry with the best mean-over-views score goes to
              every view.
    distinct: views are processed in index order, each taking its best entry
              not already taken.
    """
    q = views.views if isinstance(views, MultiViewEmbedding) else as_matrix(views, "views")
    item = views.item_id if isinstance(views, MultiViewEmbedding) else item_id
    mode = str(mode).lower()
    if mode not in MODES:
        raise ConfigError(f"search mode must be one of {MODES}, got {mode!r}")
    if corpus.count == 0:
        raise DataError("search_owk_per_view: empty corpus")
    if q.shape[1] != corpus.dimension:
        raise DataError("search_owk_per_view: dimension mismatch")
    n = q.shape[0]
    if mode == MODE_DISTINCT and corpus.count < n:
        raise DataError(
            f"search_owk_per_view: distinct mode needs corpus >= {n} entries, have {corpus.count}"
        )

    per_view_scores = [_row_scores(corpus.vectors, q[i]) for i in range(n)]

    if mode == MODE_PROPOSED:
        picks = [int(_ordering(s)[0]) for s in per_view_scores]
    elif mode == MODE_UNIFORM:
        mean_scores = np.mean(per_view_scores, axis=0)
        shared = int(_ordering(mean_scores)[0])
        picks = [shared] * n
    else:
        taken: set[int] = set()
        picks = []
        for s in per_view_scores:
            for idx in _ordering(s):
                if int(idx) not in taken:
                    taken.add(int(idx))
                    picks.append(int(idx))
                    break

    return RetrievalResult(
        item_id=item,
        mode=mode,
        entry_ids=[corpus.entry_ids[i] for i in picks],
        scores=[float(per_view_scores[v][i]) for v, i in enumerate(picks)],
        ranks=[_rank_of(per_view_scores[v], i) for v, i in enumerate(picks)],
    )


def duplication_rate(results: list[RetrievalResult]) -> float:
    """Mean per-item duplication, in percent.

    Per item with n retrievals, duplication = 1 - (distinct - 1)/(n - 1):
    one shared entry scores 100, all-distinct scores 0.
    """
    if not results:
        raise DataError("duplication_rate: no results")
    values = []
    for res in results:
        if res.n < 2:
            raise DataError("duplication_rate: results need n >= 2 retrievals")
        distinct = len(set(res.entry_ids))
        values.append(1.0 - (distinct - 1) / (res.n - 1))
    return 100.0 * float(np.mean(values))


def gather_entries(corpus: KnowledgeCorpus, entry_ids: list[str]) -> np.ndarray:
    """Float64 embedding rows for the given entry ids, in order."""
    index = {eid: i for i, eid in enumerate(corpus.entry_ids)}
    try:
        rows = [index[eid] for eid in entry_ids]
    except KeyError as exc:
        raise DataError(f"gather_entries: unknown entry id {exc}") from exc
    return corpus.vectors[rows].astype(np.float64)


class KnowledgeSearcher:
    """Estimator-style wrapper: fit on a corpus, then query it.

    Kept API-compatible with the rest of the sklearn-shaped surface
    (get_params/set_params via BaseEstimator conventions).
    """

    def __init__(self, mode: str = MODE_PROPOSED, threads: int | None = None):
        self.mode = mode
        self.threads = threads

    def get_params(self, deep: bool = True) -> dict:
        return {"mode": self.mode, "threads": self.threads}

    def set_params(self, **params) -> "KnowledgeSearcher":
        for key, value in params.items():
            if key not in ("mode", "threads"):
                raise ConfigError(f"KnowledgeSearcher: unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, corpus: KnowledgeCorpus) -> "KnowledgeSearcher":
        if not isinstance(corpus, KnowledgeCorpus):
            raise DataError("KnowledgeSearcher.fit: expected a KnowledgeCorpus")
        if str(self.mode).lower() not in MODES:
            raise ConfigError(f"KnowledgeSearcher: bad mode {self.mode!r}")
        self.corpus_ = corpus
        return self

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        self._check_fitted()
        return search_topk(query, self.corpus_, k, self.threads)

    def retrieve(self, views, item_id: str = "") -> RetrievalResult:
        self._check_fitted()
        return search_owk_per_view(views, self.corpus_, self.mode, item_id)

    def _check_fitted(self) -> None:
        if not hasattr(self, "corpus_"):
            raise DataError("KnowledgeSearcher: call fit before querying")
