"""Acceptance gate: one test per shipping criterion, one printed verdict each.

Every test prints "[acceptance] <name>: PASS|FAIL (<detail>)" on the real
stdout before asserting, so a plain pytest run always shows the scorecard.
Tolerances and instance counts are pinned here; loosening them is a release
decision, not a test edit.
"""

import contextlib
import json
import pathlib
import time

import numpy as np
import pytest

from qrank.config import (
    PathSettings,
    RunConfig,
    ScorerSettings,
    SearchSettings,
    ViewSettings,
)
from qrank.corpus import KnowledgeCorpus, load_corpus
from qrank.losses import global_loss, local_loss, mvc_loss, mvr_loss, total_loss
from qrank.metrics import example_f1, parse_hierarchy, rank_metrics
from qrank.pipeline import run_pipeline
from qrank.retrieval import search_topk
from qrank.scorer import ScorerParams, fuse, init_scorer_params, scorer_loss
from qrank.synth import SyntheticSpec, generate_synthetic
from qrank.views import ViewTrainConfig, train_view_head

from oracles import FD_STEP, finite_difference, naive_topk, relative_error

GRAD_INSTANCES = 100  # per loss function
GRAD_TOL = 1e-4
GRAD_BUDGET_S = 60.0
DIVERSITY_BUDGET_S = 300.0
RANK_DROP_PTS = 2.0
FUSION_GAIN_PTS = 20.0
FUSION_FALLBACK_PTS = 5.0
SCORE_RTOL = 1e-12
METRIC_TOL = 1e-12
KINK_MARGIN = 1e-2  # min |hidden pre-activation|: keeps FD away from ReLU kinks


@contextlib.contextmanager
def _verdict(capfd, name):
    """Collects {ok, detail} and prints exactly one scorecard line."""
    outcome = {"ok": False, "detail": ""}
    try:
        yield outcome
    except BaseException as exc:
        with capfd.disabled():
            print(f"[acceptance] {name}: FAIL ({type(exc).__name__}: {exc})", flush=True)
        raise
    status = "PASS" if outcome["ok"] else "FAIL"
    with capfd.disabled():
        print(f"[acceptance] {name}: {status} ({outcome['detail']})", flush=True)
    assert outcome["ok"], f"{name}: {outcome['detail']}"


# --- shared builders --------------------------------------------------------

def _draw_rows(rng, shape):
    """Random rows with norms bounded away from zero, for cosine stability."""
    while True:
        x = rng.normal(size=shape)
        if np.min(np.linalg.norm(np.atleast_2d(x), axis=1)) > 0.5:
            return x


def _view_instance(rng):
    d = int(rng.integers(2, 17))
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 5))
    views = _draw_rows(rng, (n, d))
    pos = _draw_rows(rng, d)
    negs = _draw_rows(rng, (m, d))
    w = rng.uniform(0.1, 1.0, size=n)
    w /= w.sum()
    lam = float(rng.uniform(0.0, 0.5))
    temp = float(rng.uniform(0.5, 2.0))
    return views, pos, negs, w, lam, temp


def _scorer_instance(rng):
    """Random scorer instance whose hidden pre-activations clear the kink margin."""
    while True:
        d = int(rng.integers(4, 17))
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 5))
        views = _draw_rows(rng, (n, d))
        owk = _draw_rows(rng, (n, d))
        gt = _draw_rows(rng, d)
        negs = _draw_rows(rng, (m, d))
        w = rng.uniform(0.1, 1.0, size=n)
        w /= w.sum()
        lam = float(rng.uniform(0.0, 0.5)) if n > 1 else 0.0
        temp = float(rng.uniform(0.5, 2.0))
        params = init_scorer_params(d, int(rng.integers(0, 10_000)))
        z1 = np.vstack([owk, views]) @ params.w1 + params.b1
        if np.min(np.abs(z1)) > KINK_MARGIN:
            return views, owk, gt, negs, w, lam, temp, params


def _pack_params(p):
    return np.concatenate([p.w1.ravel(), p.b1, p.w2, p.b2])


def _unpack_params(vec, dim, hidden):
    i = 0
    w1 = vec[i : i + dim * hidden].reshape(dim, hidden)
    i += dim * hidden
    b1 = vec[i : i + hidden]
    i += hidden
    w2 = vec[i : i + hidden]
    i += hidden
    return ScorerParams(w1, b1, w2, vec[i : i + 1])


def _split(vec, n, d, m):
    views = vec[: n * d].reshape(n, d)
    pos = vec[n * d : n * d + d]
    negs = vec[n * d + d :].reshape(m, d)
    return views, pos, negs


def _synth_run(tmp_path, tag, spec, data_seed, cfg_kwargs):
    data_dir = tmp_path / f"{tag}-data"
    data_dir.mkdir(exist_ok=True)
    paths = generate_synthetic(spec, seed=data_seed, out_dir=str(data_dir))
    cfg = RunConfig(
        paths=PathSettings(
            bases=paths["bases"],
            labels=paths["labels"],
            owk=paths["owk"],
            out_dir=str(tmp_path / f"{tag}-out"),
        ),
        **cfg_kwargs,
    )
    run_pipeline(cfg)
    report = json.loads(pathlib.Path(cfg.paths.out_dir, "report.json").read_text())
    return cfg, report


# --- criteria ---------------------------------------------------------------

def test_gradient_suite(capfd):
    """Analytic gradients match central finite differences on random instances."""
    rng = np.random.default_rng(20_240_001)
    started = time.monotonic()
    worst = 0.0

    def check(analytic, loss_fn, x):
        nonlocal worst
        err = relative_error(analytic, finite_difference(loss_fn, x, FD_STEP))
        worst = max(worst, err)
        return err < GRAD_TOL

    with _verdict(capfd, "gradient-suite") as out:
        ok = True
        for _ in range(GRAD_INSTANCES):
            views, pos, negs, w, lam, temp = _view_instance(rng)
            n, d = views.shape
            m = negs.shape[0]
            q = views[0]

            _, g = mvc_loss(q, pos, negs, temp)
            packed = np.concatenate([q, pos, negs.ravel()])
            ok &= check(
                np.concatenate([g.query, g.positive, g.negatives.ravel()]),
                lambda v: mvc_loss(v[:d], v[d : 2 * d], v[2 * d :].reshape(m, d), temp)[0],
                packed,
            )

            _, g_views = mvr_loss(views)
            ok &= check(g_views, lambda v: mvr_loss(v.reshape(n, d))[0], views)

            packed = np.concatenate([views.ravel(), pos, negs.ravel()])
            for fn in (
                lambda a, b, c: local_loss(a, b, c, w, lam, temp),
                lambda a, b, c: global_loss(a, b, c, temp),
                lambda a, b, c: total_loss(a, b, c, w, lam, temp),
            ):
                _, g = fn(views, pos, negs)
                ok &= check(
                    np.concatenate([g.views.ravel(), g.positive, g.negatives.ravel()]),
                    lambda v, fn=fn: fn(*_split(v, n, d, m))[0],
                    packed,
                )

        for _ in range(GRAD_INSTANCES):
            views, owk, gt, negs, w, lam, temp, params = _scorer_instance(rng)
            d, hidden = params.w1.shape
            _, grads = scorer_loss(fuse(views, owk, params), gt, negs, params, w, lam, temp)

            def loss_at(vec):
                p = _unpack_params(vec, d, hidden)
                return scorer_loss(fuse(views, owk, p), gt, negs, p, w, lam, temp)[0]

            ok &= check(
                np.concatenate([grads.w1.ravel(), grads.b1, grads.w2, grads.b2]),
                loss_at,
                _pack_params(params),
            )

        elapsed = time.monotonic() - started
        out["ok"] = ok and elapsed < GRAD_BUDGET_S
        out["detail"] = (
            f"6 losses x {GRAD_INSTANCES} instances, max rel err {worst:.2e} "
            f"(tol {GRAD_TOL:.0e}), {elapsed:.1f}s"
        )


def test_retrieval_exactness(capfd):
    """Threaded top-k agrees with the naive oracle and is thread-invariant."""
    rng = np.random.default_rng(20_240_002)
    queries_per_corpus, corpora, dim, count = 10, 5, 16, 1000

    with _verdict(capfd, "retrieval-exactness") as out:
        ok = True
        worst = 0.0
        for _ in range(corpora):
            vectors = rng.normal(size=(count, dim)).astype(np.float32)
            ids = [f"e{i:04d}" for i in range(count)]
            corpus = KnowledgeCorpus(ids, vectors, list(ids))
            for _ in range(queries_per_corpus):
                q = rng.normal(size=dim)
                for k in (1, 5, 10):
                    expected = naive_topk(q, vectors, k)
                    by_threads = [search_topk(q, corpus, k, threads=t) for t in (1, 2, 8)]
                    ok &= by_threads[0] == by_threads[1] == by_threads[2]
                    got = by_threads[0]
                    ok &= [eid for eid, _ in got] == [ids[i] for i, _ in expected]
                    for (_, score), (_, want) in zip(got, expected):
                        err = abs(score - want) / max(1.0, abs(want))
                        worst = max(worst, err)
                        ok &= err <= SCORE_RTOL
        out["ok"] = ok
        out["detail"] = (
            f"{corpora * queries_per_corpus} queries x {count} entries, "
            f"k in (1, 5, 10), threads (1, 2, 8), max score rel err {worst:.1e}"
        )


def test_metric_goldens(capfd):
    """Frozen hierarchy-overlap values plus the top1-implies-top5 ordering."""
    with _verdict(capfd, "metric-goldens") as out:
        zurich = parse_hierarchy("Zurich, Switzerland, Europe")
        madrid = parse_hierarchy("Madrid, Spain, Europe")
        europe = parse_hierarchy("Europe")
        goldens = [
            (example_f1(zurich, zurich), 1.0),
            (example_f1(zurich, madrid), 1.0 / 3.0),
            (example_f1(zurich, europe), 0.5),
        ]
        ok = all(abs(got - want) <= METRIC_TOL for got, want in goldens)

        rng = np.random.default_rng(20_240_003)
        pool = [f"label{i}" for i in range(12)]
        violations = 0
        for _ in range(1000):
            ranking = [pool[i] for i in rng.permutation(len(pool))]
            gt = pool[int(rng.integers(len(pool)))]
            m = rank_metrics([ranking], [gt])
            if m.accuracy > m.rank_at_5:
                violations += 1
        ok &= violations == 0
        out["ok"] = ok
        out["detail"] = (
            f"overlap goldens within {METRIC_TOL:.0e}, "
            f"{violations} accuracy>rank@5 violations in 1000 rankings"
        )


def test_search_mode_duplication(capfd, tmp_path):
    """Forced-identical retrieval duplicates fully; forced-distinct never does."""
    spec = SyntheticSpec(items=12, labels=3, dim=8, owk_size=24, noise=0.25)
    with _verdict(capfd, "search-mode-duplication") as out:
        rates = {}
        for mode in ("uniform", "distinct"):
            _, report = _synth_run(
                tmp_path,
                f"dup-{mode}",
                spec,
                data_seed=31,
                cfg_kwargs=dict(
                    seed=7,
                    views=ViewSettings(n_views=6, learning_rate=0.3, epochs=2, batch_size=6),
                    scorer=ScorerSettings(learning_rate=0.3, epochs=2, batch_size=6),
                    search=SearchSettings(mode=mode),
                ),
            )
            rates[mode] = report["metrics"]["duplication_rate_pct"]
        out["ok"] = rates["uniform"] == 100.0 and rates["distinct"] == 0.0
        out["detail"] = (
            f"n=6 views: uniform {rates['uniform']:.2f}%, distinct {rates['distinct']:.2f}%"
        )


def test_diversity_regularization(capfd, tmp_path):
    """The diversity penalty separates views without costing label accuracy."""
    started = time.monotonic()
    spec = SyntheticSpec(items=60, labels=4, dim=16, owk_size=12, noise=0.25)
    paths = generate_synthetic(spec, seed=123, out_dir=str(tmp_path))
    bases = load_corpus(paths["bases"])
    labels = load_corpus(paths["labels"])
    by_text = dict(zip(labels.labels, labels.vectors.astype(np.float64)))
    base_vecs = bases.vectors.astype(np.float64)
    gt_vecs = np.stack([by_text[t] for t in bases.gt_labels])

    with _verdict(capfd, "diversity-regularization") as out:
        finals = {}
        for lam in (0.0, 0.1):
            cfg = ViewTrainConfig(
                seed=9,
                n_views=6,
                learning_rate=0.5,
                epochs=20,
                batch_size=16,
                mvr_weight=lam,
            )
            _, log = train_view_head(
                base_vecs, gt_vecs, cfg, candidates=labels.vectors.astype(np.float64)
            )
            finals[lam] = log[-1]
        cos_base = finals[0.0]["mean_view_cosine"]
        cos_reg = finals[0.1]["mean_view_cosine"]
        acc_base = 100.0 * float(np.mean(finals[0.0]["view_acc"]))
        acc_reg = 100.0 * float(np.mean(finals[0.1]["view_acc"]))
        elapsed = time.monotonic() - started
        out["ok"] = (
            cos_reg < cos_base
            and acc_reg >= acc_base - RANK_DROP_PTS
            and elapsed < DIVERSITY_BUDGET_S
        )
        out["detail"] = (
            f"final cosine {cos_base:.6f} -> {cos_reg:.6f}, "
            f"rank@1 {acc_base:.2f}% -> {acc_reg:.2f}%, {elapsed:.1f}s"
        )


def test_fusion_benefit(capfd, tmp_path):
    """Knowledge-only signal must lift fused ranking; view-only must not hurt it."""
    cfg_kwargs = dict(
        seed=17,
        views=ViewSettings(n_views=4, learning_rate=0.3, epochs=6, batch_size=16, mvr_weight=0.1),
        scorer=ScorerSettings(learning_rate=0.3, epochs=6, batch_size=16, mvr_weight=0.1),
        search=SearchSettings(mode="proposed"),
    )

    def planted(view_signal, knowledge_signal, tag):
        spec = SyntheticSpec(
            items=40,
            labels=5,
            dim=16,
            owk_size=80,
            view_signal=view_signal,
            knowledge_signal=knowledge_signal,
            noise=0.25,
        )
        _, report = _synth_run(tmp_path, tag, spec, data_seed=21, cfg_kwargs=cfg_kwargs)
        m = report["metrics"]
        return m["fused"]["accuracy"], m["vision_only"]["accuracy"]

    with _verdict(capfd, "fusion-benefit") as out:
        fused_k, vision_k = planted(0.0, 1.0, "knowledge-only")
        fused_v, vision_v = planted(1.0, 0.0, "view-only")
        out["ok"] = (
            fused_k >= vision_k + FUSION_GAIN_PTS
            and abs(fused_v - vision_v) <= FUSION_FALLBACK_PTS
        )
        out["detail"] = (
            f"knowledge-only fused {fused_k:.2f}% vs vision {vision_k:.2f}% "
            f"(need +{FUSION_GAIN_PTS:.0f}); view-only fused {fused_v:.2f}% "
            f"vs vision {vision_v:.2f}% (need within {FUSION_FALLBACK_PTS:.0f})"
        )


def test_determinism(capfd, tmp_path):
    """Two seed-fixed end-to-end runs publish byte-identical reports."""
    spec = SyntheticSpec(
        items=14, labels=3, dim=8, owk_size=20, view_signal=0.9, knowledge_signal=0.9, noise=0.3
    )
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    paths = generate_synthetic(spec, seed=5, out_dir=str(data_dir))

    def run(tag):
        cfg = RunConfig(
            seed=11,
            paths=PathSettings(
                bases=paths["bases"],
                labels=paths["labels"],
                owk=paths["owk"],
                out_dir=str(tmp_path / tag),
            ),
            views=ViewSettings(n_views=3, learning_rate=0.3, epochs=2, batch_size=6),
            scorer=ScorerSettings(learning_rate=0.3, epochs=2, batch_size=6),
        )
        run_pipeline(cfg)
        root = pathlib.Path(cfg.paths.out_dir)
        return (root / "report.json").read_bytes(), (root / "fusion.jsonl").read_bytes()

    with _verdict(capfd, "determinism") as out:
        report_a, fusion_a = run("run-a")
        report_b, fusion_b = run("run-b")
        out["ok"] = report_a == report_b and fusion_a == fusion_b
        out["detail"] = (
            f"report {len(report_a)} bytes, fusion {len(fusion_a)} bytes, "
            f"identical across out dirs: {report_a == report_b and fusion_a == fusion_b}"
        )
