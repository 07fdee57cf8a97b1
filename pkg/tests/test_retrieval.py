from __future__ import annotations

import numpy as np
import pytest

from qrank.corpus import KnowledgeCorpus, MultiViewEmbedding
from qrank.errors import ConfigError, DataError
from qrank.retrieval import (
    KnowledgeSearcher,
    RetrievalResult,
    duplication_rate,
    gather_entries,
    resolve_thread_count,
    search_owk_per_view,
    search_topk,
)

from oracles import naive_topk


def _corpus(rng, count=50, dim=8):
    vectors = rng.normal(size=(count, dim)).astype(np.float32)
    return KnowledgeCorpus(
        [f"e{i:05d}" for i in range(count)], vectors, [f"t{i}" for i in range(count)]
    )


# --- search_topk -----------------------------------------------------------

def test_unit_query_finds_itself():
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(20, 6))
    vectors /= np.linalg.norm(vectors, axis=1)[:, None]
    corpus = KnowledgeCorpus(
        [f"e{i}" for i in range(20)], vectors.astype(np.float32), ["t"] * 20
    )
    query = corpus.vectors[7].astype(np.float64)
    top = search_topk(query, corpus, k=1)
    assert top[0][0] == "e7"
    assert top[0][1] == pytest.approx(1.0, abs=1e-5)


def test_k_equal_corpus_size_is_total_ordering():
    rng = np.random.default_rng(1)
    corpus = _corpus(rng, count=12)
    hits = search_topk(rng.normal(size=8), corpus, k=12)
    assert len(hits) == 12
    assert sorted(h[0] for h in hits) == sorted(corpus.entry_ids)
    scores = [h[1] for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_matches_naive_oracle_across_threads():
    rng = np.random.default_rng(2)
    corpus = _corpus(rng, count=200, dim=10)
    for _ in range(10):
        query = rng.normal(size=10)
        expected = naive_topk(query, corpus.vectors, 5)
        single = search_topk(query, corpus, k=5, threads=1)
        assert [g[0] for g in single] == [corpus.entry_ids[i] for i, _ in expected]
        for got, (_, score) in zip(single, expected):
            # same dot product under two float64 summation orders: last-ulp only
            assert got[1] == pytest.approx(score, rel=1e-12)
        for threads in (2, 8):
            # thread count must not change a single bit of the output
            assert search_topk(query, corpus, k=5, threads=threads) == single


def test_tie_break_is_ascending_index():
    vectors = np.tile(np.array([1.0, 0.0], dtype=np.float32), (6, 1))
    corpus = KnowledgeCorpus([f"e{i}" for i in range(6)], vectors, ["t"] * 6)
    hits = search_topk(np.array([1.0, 0.0]), corpus, k=3, threads=4)
    assert [h[0] for h in hits] == ["e0", "e1", "e2"]


def test_search_rejects_bad_inputs():
    rng = np.random.default_rng(3)
    corpus = _corpus(rng, count=5)
    with pytest.raises(DataError):
        search_topk(rng.normal(size=8), corpus, k=6)
    with pytest.raises(DataError):
        search_topk(rng.normal(size=8), corpus, k=0)
    with pytest.raises(DataError):
        search_topk(rng.normal(size=9), corpus, k=1)
    empty = KnowledgeCorpus([], np.empty((0, 8), dtype=np.float32), [])
    with pytest.raises(DataError):
        search_topk(rng.normal(size=8), empty, k=1)


def test_scores_invariant_under_storage_permutation():
    rng = np.random.default_rng(4)
    corpus = _corpus(rng, count=30)
    query = rng.normal(size=8)
    perm = rng.permutation(30)
    shuffled = KnowledgeCorpus(
        [corpus.entry_ids[i] for i in perm],
        corpus.vectors[perm],
        [corpus.text_refs[i] for i in perm],
    )
    a = dict(search_topk(query, corpus, k=30))
    b = dict(search_topk(query, shuffled, k=30))
    assert a == b


# --- thread resolution -------------------------------------------------------

def test_thread_env_caps_requests(monkeypatch):
    monkeypatch.delenv("QR_THREADS", raising=False)
    assert resolve_thread_count(None) == 1
    assert resolve_thread_count(8) == 8
    monkeypatch.setenv("QR_THREADS", "2")
    assert resolve_thread_count(8) == 2
    assert resolve_thread_count(None) == 2
    monkeypatch.setenv("QR_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve_thread_count(4)
    monkeypatch.setenv("QR_THREADS", "0")
    with pytest.raises(ConfigError):
        resolve_thread_count(4)


# --- per-view modes ----------------------------------------------------------

def _views(rng, n=6, dim=8):
    v = rng.normal(size=(n, dim))
    return MultiViewEmbedding("item0", v / np.linalg.norm(v, axis=1)[:, None])


def test_identical_views_proposed_equals_uniform():
    rng = np.random.default_rng(5)
    corpus = _corpus(rng, count=40)
    view = rng.normal(size=8)
    mv = MultiViewEmbedding("x", np.tile(view, (6, 1)))
    proposed = search_owk_per_view(mv, corpus, "proposed")
    uniform = search_owk_per_view(mv, corpus, "uniform")
    assert set(proposed.entry_ids) == set(uniform.entry_ids)
    assert duplication_rate([proposed]) == 100.0


def test_distinct_mode_yields_distinct_ids():
    rng = np.random.default_rng(6)
    corpus = _corpus(rng, count=10)
    mv = MultiViewEmbedding("x", np.tile(rng.normal(size=8), (6, 1)))
    res = search_owk_per_view(mv, corpus, "distinct")
    assert len(set(res.entry_ids)) == 6


def test_proposed_matches_independent_topk_calls():
    rng = np.random.default_rng(7)
    corpus = _corpus(rng, count=60)
    mv = _views(rng)
    res = search_owk_per_view(mv, corpus, "proposed")
    for i in range(mv.n):
        top = search_topk(mv.views[i], corpus, k=1)
        assert res.entry_ids[i] == top[0][0]
        assert res.scores[i] == pytest.approx(top[0][1], abs=1e-12)
        assert res.ranks[i] == 1


def test_uniform_maximizes_mean_score():
    rng = np.random.default_rng(8)
    corpus = _corpus(rng, count=25)
    mv = _views(rng, n=4)
    res = search_owk_per_view(mv, corpus, "uniform")
    mean_scores = corpus.vectors.astype(np.float64) @ mv.views.mean(axis=0)
    assert res.entry_ids[0] == corpus.entry_ids[int(np.argmax(mean_scores))]
    assert len(set(res.entry_ids)) == 1


def test_distinct_processes_views_in_index_order():
    # corpus of 3 entries, both views prefer e0: view 0 takes it, view 1
    # falls back to its own next-best choice
    vectors = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]], dtype=np.float32)
    corpus = KnowledgeCorpus(["e0", "e1", "e2"], vectors, ["a", "b", "c"])
    views = np.array([[1.0, 0.0], [1.0, 0.05]])
    res = search_owk_per_view(MultiViewEmbedding("x", views), corpus, "distinct")
    assert res.entry_ids == ["e0", "e1"]
    assert res.ranks == [1, 2]


def test_distinct_requires_large_enough_corpus():
    rng = np.random.default_rng(9)
    corpus = _corpus(rng, count=3)
    with pytest.raises(DataError):
        search_owk_per_view(_views(rng, n=6), corpus, "distinct")


def test_unknown_mode_rejected():
    rng = np.random.default_rng(10)
    with pytest.raises(ConfigError):
        search_owk_per_view(_views(rng), _corpus(rng), "best")


def test_result_invariants_enforced():
    with pytest.raises(DataError):
        RetrievalResult("x", "uniform", ["a", "b"], [1.0, 1.0], [1, 1])
    with pytest.raises(DataError):
        RetrievalResult("x", "distinct", ["a", "a"], [1.0, 1.0], [1, 1])


# --- duplication rate ---------------------------------------------------------

def _result(ids, mode="proposed"):
    return RetrievalResult("x", mode, ids, [0.0] * len(ids), [1] * len(ids))


def test_uniform_duplication_is_100():
    results = [_result(["e"] * 6, "uniform") for _ in range(5)]
    assert duplication_rate(results) == 100.0


def test_distinct_duplication_is_0():
    results = [_result([f"e{i}" for i in range(6)], "distinct") for _ in range(5)]
    assert duplication_rate(results) == 0.0


def test_three_distinct_of_six_is_60_percent():
    results = [_result(["a", "a", "b", "b", "c", "c"])]
    assert duplication_rate(results) == pytest.approx(60.0, abs=1e-12)


def test_duplication_needs_two_views():
    with pytest.raises(DataError):
        duplication_rate([_result(["a"])])
    with pytest.raises(DataError):
        duplication_rate([])


# --- searcher wrapper ---------------------------------------------------------

def test_searcher_fit_and_query():
    rng = np.random.default_rng(11)
    corpus = _corpus(rng, count=30)
    searcher = KnowledgeSearcher(mode="proposed").fit(corpus)
    mv = _views(rng, n=3)
    res = searcher.retrieve(mv)
    assert res.n == 3
    top = searcher.top_k(mv.views[0], k=4)
    assert len(top) == 4


def test_searcher_params_round_trip():
    s = KnowledgeSearcher(mode="uniform", threads=2)
    assert s.get_params() == {"mode": "uniform", "threads": 2}
    s.set_params(mode="distinct")
    assert s.mode == "distinct"
    with pytest.raises(ConfigError):
        s.set_params(bogus=1)


def test_searcher_requires_fit():
    with pytest.raises(DataError):
        KnowledgeSearcher().top_k(np.ones(4), 1)


def test_gather_entries_in_order():
    rng = np.random.default_rng(12)
    corpus = _corpus(rng, count=10)
    rows = gather_entries(corpus, ["e00003", "e00001"])
    assert np.allclose(rows[0], corpus.vectors[3].astype(np.float64))
    assert np.allclose(rows[1], corpus.vectors[1].astype(np.float64))
    with pytest.raises(DataError):
        gather_entries(corpus, ["nope"])
