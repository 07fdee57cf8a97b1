"""Five-stage run orchestration with content-addressed stage caching.

ingest -> train-views -> search -> train-scorer -> evaluate. Every stage
writes its artifacts into a directory named by a digest of (stage settings,
upstream digest, input content), so reruns with identical config and inputs
reuse finished stages and always reproduce identical bytes. Thread counts
are excluded from digests: they may change wall time, never results.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import RunConfig
from .corpus import (
    KnowledgeCorpus,
    LabelSpace,
    ViewEmbeddingSet,
    load_params,
    load_typed,
    normalized_copy,
    save_corpus,
    save_params,
    sidecar_path,
)
from .errors import ConfigError, DataError, QrankError
from .metrics import EvalReport, evaluate_run
from .retrieval import (
    RetrievalResult,
    duplication_rate,
    resolve_thread_count,
    search_owk_per_view,
)
from .scorer import (
    ScorerParams,
    ScorerTrainConfig,
    fuse,
    rank_labels_fused,
    train_scorer_on_features,
)
from .views import (
    ViewTrainConfig,
    _project_all,
    rank_labels_multiview,
    train_view_head,
)

STAGES = ("ingest", "train-views", "search", "train-scorer", "evaluate")


@dataclass
class StageInfo:
    name: str
    digest: str
    path: str
    reused: bool


@dataclass
class PipelineResult:
    stages: list[StageInfo]
    report: Optional[dict] = None
    report_path: Optional[str] = None
    fusion_path: Optional[str] = None

    def stage(self, name: str) -> StageInfo:
        for info in self.stages:
            if info.name == name:
                return info
        raise KeyError(name)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return digest.hexdigest()


def _corpus_identity(path: str) -> dict:
    return {
        "file": os.path.basename(path),
        "sha256": _sha256_file(path),
        "sidecar_sha256": _sha256_file(sidecar_path(path)),
    }


def _digest_of(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_jsonl(path: str, records: list[dict]) -> None:
    _write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


_DONE = ".done"


class _Stage:
    """One cached stage: a digest-named directory plus a completion marker."""

    def __init__(self, out_dir: str, name: str, payload: dict, force: bool):
        self.name = name
        self.digest = _digest_of({"stage": name, **payload})
        self.path = os.path.join(out_dir, "stages", f"{name}-{self.digest}")
        self.reused = not force and os.path.exists(os.path.join(self.path, _DONE))

    def file(self, basename: str) -> str:
        os.makedirs(self.path, exist_ok=True)
        return os.path.join(self.path, basename)

    def finish(self) -> None:
        _write_text(os.path.join(self.path, _DONE), self.digest + "\n")

    def info(self) -> StageInfo:
        return StageInfo(self.name, self.digest, self.path, self.reused)


def _stage_guard(name: str):
    """Re-raise stage failures with the stage name attached, same type."""

    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, QrankError) and not getattr(
                exc, "_stage_tagged", False
            ):
                tagged = exc_type(f"[{name}] {exc}")
                tagged._stage_tagged = True
                raise tagged from exc
            return False

    return _Guard()


def _load_gt_vectors(bases: ViewEmbeddingSet, labels: LabelSpace) -> np.ndarray:
    if any(g is None for g in bases.gt_labels):
        raise DataError("training requires a gt label on every image row")
    idx = [labels.index_of(g) for g in bases.gt_labels]
    return labels.vectors[idx].astype(np.float64)


def _group_views(views_set: ViewEmbeddingSet) -> tuple[list[str], np.ndarray, list[str]]:
    """(item_ids, (N, n, d) stack, per-item gt) from a projected-view file."""
    by_item: dict[str, dict[int, np.ndarray]] = {}
    gt_by_item: dict[str, Optional[str]] = {}
    order: list[str] = []
    for row, item in enumerate(views_set.item_ids):
        if item not in by_item:
            by_item[item] = {}
            gt_by_item[item] = views_set.gt_labels[row]
            order.append(item)
        view_index = views_set.view_indices[row]
        if view_index is None:
            raise DataError(f"projected views file misses view_index on {item!r}")
        by_item[item][int(view_index)] = views_set.vectors[row].astype(np.float64)
    n = len(by_item[order[0]])
    stack = np.empty((len(order), n, views_set.dimension), dtype=np.float64)
    for i, item in enumerate(order):
        rows = by_item[item]
        if sorted(rows) != list(range(n)):
            raise DataError(f"item {item!r} has inconsistent view indices")
        for j in range(n):
            stack[i, j] = rows[j]
    gts = [gt_by_item[item] for item in order]
    return order, stack, gts


def _stage_ingest(cfg: RunConfig, force: bool) -> _Stage:
    inputs = {
        "bases": _corpus_identity(cfg.paths.bases),
        "labels": _corpus_identity(cfg.paths.labels),
        "owk": _corpus_identity(cfg.paths.owk),
    }
    stage = _Stage(
        cfg.paths.out_dir, "ingest", {"normalize": cfg.normalize, "inputs": inputs}, force
    )
    stage.inputs = inputs
    if stage.reused:
        return stage
    with _stage_guard("ingest"):
        bases = load_typed(cfg.paths.bases, ViewEmbeddingSet)
        labels = load_typed(cfg.paths.labels, LabelSpace)
        owk = load_typed(cfg.paths.owk, KnowledgeCorpus)
        if not (bases.dimension == labels.dimension == owk.dimension):
            raise DataError(
                f"dimension mismatch: bases {bases.dimension}, labels "
                f"{labels.dimension}, owk {owk.dimension}"
            )
        if cfg.normalize:
            bases, labels, owk = map(normalized_copy, (bases, labels, owk))
        save_corpus(bases, stage.file("bases.qemb"))
        save_corpus(labels, stage.file("labels.qemb"))
        save_corpus(owk, stage.file("owk.qemb"))
        stage.finish()
    return stage


def _stage_train_views(cfg: RunConfig, ingest: _Stage, force: bool) -> _Stage:
    stage = _Stage(
        cfg.paths.out_dir,
        "train-views",
        {
            "prev": ingest.digest,
            "seed": cfg.seed,
            "views": dataclasses.asdict(cfg.views),
        },
        force,
    )
    if stage.reused:
        return stage
    with _stage_guard("train-views"):
        bases = load_typed(ingest.file("bases.qemb"), ViewEmbeddingSet)
        labels = load_typed(ingest.file("labels.qemb"), LabelSpace)
        x = bases.vectors.astype(np.float64)
        y = _load_gt_vectors(bases, labels)
        vcfg = ViewTrainConfig(
            seed=cfg.seed,
            n_views=cfg.views.n_views,
            mvr_weight=cfg.views.mvr_weight,
            learning_rate=cfg.views.learning_rate,
            epochs=cfg.views.epochs,
            batch_size=cfg.views.batch_size,
            temperature=cfg.views.temperature,
            init_sigma=cfg.views.init_sigma,
        )
        params, log = train_view_head(
            x, y, vcfg, candidates=labels.vectors.astype(np.float64)
        )
        save_params(params.to_tensors(), stage.file("view_params.qemb"))

        n = cfg.views.n_views
        views_all = _project_all(x, params)  # (N, n, d)
        projected = ViewEmbeddingSet(
            item_ids=[item for item in bases.item_ids for _ in range(n)],
            vectors=views_all.reshape(-1, bases.dimension).astype(np.float32),
            gt_labels=[g for g in bases.gt_labels for _ in range(n)],
            view_indices=[j for _ in bases.item_ids for j in range(n)],
        )
        save_corpus(projected, stage.file("views.qemb"))
        _write_jsonl(stage.file("view_log.jsonl"), log)
        stage.finish()
    return stage


def _stage_search(cfg: RunConfig, ingest: _Stage, views: _Stage, force: bool) -> _Stage:
    stage = _Stage(
        cfg.paths.out_dir,
        "search",
        {"prev": views.digest, "mode": cfg.search.mode},
        force,
    )
    if stage.reused:
        return stage
    with _stage_guard("search"):
        projected = load_typed(views.file("views.qemb"), ViewEmbeddingSet)
        owk = load_typed(ingest.file("owk.qemb"), KnowledgeCorpus)
        item_ids, stack, _ = _group_views(projected)

        def _one(pair) -> RetrievalResult:
            item, rows = pair
            return search_owk_per_view(rows, owk, cfg.search.mode, item_id=item)

        workers = resolve_thread_count(cfg.search.threads)
        pairs = list(zip(item_ids, stack))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_one, pairs))
        else:
            results = [_one(p) for p in pairs]

        lines = []
        for res in results:
            for j, (entry, score) in enumerate(zip(res.entry_ids, res.scores)):
                lines.append(
                    {
                        "item_id": res.item_id,
                        "view_index": j,
                        "entry_id": entry,
                        "score": float(score),
                        "mode": res.mode,
                    }
                )
        _write_jsonl(stage.file("search.jsonl"), lines)
        summary = {
            "mode": cfg.search.mode,
            "items": len(results),
            "entries": owk.count,
            "duplication_rate_pct": duplication_rate(results),
        }
        _write_text(stage.file("search_summary.json"), _canonical_json(summary))
        stage.finish()
    return stage


def _owk_stack(
    search_lines: list[dict], item_ids: list[str], n: int, owk: KnowledgeCorpus
) -> np.ndarray:
    index = {eid: i for i, eid in enumerate(owk.entry_ids)}
    rows = {(rec["item_id"], rec["view_index"]): rec["entry_id"] for rec in search_lines}
    stack = np.empty((len(item_ids), n, owk.dimension), dtype=np.float64)
    for i, item in enumerate(item_ids):
        for j in range(n):
            key = (item, j)
            if key not in rows:
                raise DataError(f"search results missing item {item!r} view {j}")
            entry = rows[key]
            if entry not in index:
                raise DataError(f"search result references unknown entry {entry!r}")
            stack[i, j] = owk.vectors[index[entry]].astype(np.float64)
    return stack


def _stage_train_scorer(
    cfg: RunConfig, ingest: _Stage, views: _Stage, search: _Stage, force: bool
) -> _Stage:
    stage = _Stage(
        cfg.paths.out_dir,
        "train-scorer",
        {
            "prev": search.digest,
            "seed": cfg.seed,
            "scorer": dataclasses.asdict(cfg.scorer),
        },
        force,
    )
    if stage.reused:
        return stage
    with _stage_guard("train-scorer"):
        projected = load_typed(views.file("views.qemb"), ViewEmbeddingSet)
        labels = load_typed(ingest.file("labels.qemb"), LabelSpace)
        owk = load_typed(ingest.file("owk.qemb"), KnowledgeCorpus)
        item_ids, stack, gts = _group_views(projected)
        if any(g is None for g in gts):
            raise DataError("training requires a gt label on every image row")
        y = labels.vectors[[labels.index_of(g) for g in gts]].astype(np.float64)
        owk_all = _owk_stack(
            _read_jsonl(search.file("search.jsonl")), item_ids, stack.shape[1], owk
        )
        scfg = ScorerTrainConfig(
            seed=cfg.seed,
            learning_rate=cfg.scorer.learning_rate,
            epochs=cfg.scorer.epochs,
            batch_size=cfg.scorer.batch_size,
            mvr_weight=cfg.scorer.mvr_weight,
            temperature=cfg.scorer.temperature,
            hidden=cfg.scorer.hidden,
            mode=cfg.search.mode,
        )
        params, log = train_scorer_on_features(
            stack, owk_all, y, scfg, candidates=labels.vectors.astype(np.float64)
        )
        save_params(params.to_tensors(), stage.file("scorer_params.qemb"))
        _write_jsonl(stage.file("scorer_log.jsonl"), log)
        stage.finish()
    return stage


def _stage_evaluate(
    cfg: RunConfig,
    ingest: _Stage,
    views: _Stage,
    search: _Stage,
    scorer: _Stage,
    force: bool,
) -> _Stage:
    stage = _Stage(
        cfg.paths.out_dir,
        "evaluate",
        {
            "prev": scorer.digest,
            "fused_normalize": cfg.fused_normalize,
            "semantic": cfg.semantic_dict(),
            "inputs": ingest.inputs,
        },
        force,
    )
    if stage.reused:
        return stage
    with _stage_guard("evaluate"):
        projected = load_typed(views.file("views.qemb"), ViewEmbeddingSet)
        labels = load_typed(ingest.file("labels.qemb"), LabelSpace)
        owk = load_typed(ingest.file("owk.qemb"), KnowledgeCorpus)
        params = ScorerParams.from_tensors(load_params(scorer.file("scorer_params.qemb")))
        item_ids, stack, gts = _group_views(projected)
        if any(g is None for g in gts):
            raise DataError("evaluation requires a gt label on every image row")
        owk_all = _owk_stack(
            _read_jsonl(search.file("search.jsonl")), item_ids, stack.shape[1], owk
        )

        fused_rankings = []
        vision_rankings = []
        fusion_lines = []
        for i, item in enumerate(item_ids):
            fused = fuse(stack[i], owk_all[i], params)
            ranked = rank_labels_fused(fused, labels, cfg.fused_normalize)
            fused_rankings.append([name for name, _ in ranked])
            vision_rankings.append(
                [name for name, _ in rank_labels_multiview(stack[i], labels)]
            )
            fusion_lines.append(
                {
                    "item_id": item,
                    "weights_v": [float(w) for w in fused.weights_v],
                    "weights_owk": [float(w) for w in fused.weights_owk],
                    "top5_labels": fused_rankings[-1][:5],
                }
            )

        fused_report = evaluate_run(fused_rankings, gts, labels.labels, item_ids)
        vision_report = evaluate_run(vision_rankings, gts, labels.labels, item_ids)
        summary = json.loads(
            open(search.file("search_summary.json"), encoding="utf-8").read()
        )
        report = {
            "config_digest": stage.digest,
            "run": cfg.semantic_dict(),
            "inputs": ingest.inputs,
            "metrics": {
                "fused": fused_report.to_dict(),
                "vision_only": vision_report.to_dict(),
                "duplication_rate_pct": summary["duplication_rate_pct"],
            },
            "curves": {
                "views": _read_jsonl(views.file("view_log.jsonl")),
                "scorer": _read_jsonl(scorer.file("scorer_log.jsonl")),
            },
        }
        _write_text(stage.file("report.json"), _canonical_json(report))
        _write_jsonl(stage.file("fusion.jsonl"), fusion_lines)
        stage.finish()
    return stage


def run_pipeline(
    cfg: RunConfig, force: bool = False, upto: str = "evaluate"
) -> PipelineResult:
    """Execute stages in order through `upto`; finished stages are reused
    unless force. The final report is republished at out_dir/report.json."""
    if upto not in STAGES:
        raise ConfigError(f"unknown stage {upto!r}; expected one of {STAGES}")
    for name in ("bases", "labels", "owk", "out_dir"):
        if not getattr(cfg.paths, name):
            raise ConfigError(f"paths.{name} is required to run the pipeline")

    stages: list[StageInfo] = []
    ingest = _stage_ingest(cfg, force)
    stages.append(ingest.info())
    result = PipelineResult(stages=stages)
    if upto == "ingest":
        return result

    views = _stage_train_views(cfg, ingest, force)
    stages.append(views.info())
    if upto == "train-views":
        return result

    search = _stage_search(cfg, ingest, views, force)
    stages.append(search.info())
    if upto == "search":
        return result

    scorer = _stage_train_scorer(cfg, ingest, views, search, force)
    stages.append(scorer.info())
    if upto == "train-scorer":
        return result

    evaluate = _stage_evaluate(cfg, ingest, views, search, scorer, force)
    stages.append(evaluate.info())

    with open(evaluate.file("report.json"), encoding="utf-8") as fh:
        report_text = fh.read()
    report_path = os.path.join(cfg.paths.out_dir, "report.json")
    fusion_path = os.path.join(cfg.paths.out_dir, "fusion.jsonl")
    _write_text(report_path, report_text)
    with open(evaluate.file("fusion.jsonl"), encoding="utf-8") as fh:
        _write_text(fusion_path, fh.read())

    result.report = json.loads(report_text)
    result.report_path = report_path
    result.fusion_path = fusion_path
    return result


def _metric_row(report: dict) -> dict[str, float]:
    fused = report["metrics"]["fused"]
    return {
        "Rank@1": fused["accuracy"],
        "Rank@5": fused["rank_at_5"],
        "Example-F1": fused["example_f1"],
        "Macro-F1": fused["macro_f1"],
    }


_COLUMNS = ("Rank@1", "Rank@5", "Example-F1", "Macro-F1")


def _as_report_dict(report) -> dict:
    if isinstance(report, EvalReport):
        return {"metrics": {"fused": report.to_dict()}, "curves": {}}
    if isinstance(report, dict):
        return report
    raise DataError(f"emit_report: unsupported report type {type(report).__name__}")


def emit_report(
    reports: list, out_base: str, names: Optional[list[str]] = None
) -> tuple[str, str]:
    """Write {out_base}.md (comparison table) and {out_base}_curves.csv.

    With two or more runs a relative-improvement row compares the last run
    against the first, per metric, with the average improvement in the label.
    The CSV holds one row per view-training epoch per run.
    """
    if not reports:
        raise DataError("emit_report: at least one report required")
    docs = [_as_report_dict(r) for r in reports]
    if names is None:
        names = [f"run{i}" for i in range(len(docs))]
    if len(names) != len(docs):
        raise DataError("emit_report: names/reports length mismatch")

    lines = ["# Run Comparison", ""]
    lines.append("| Run | " + " | ".join(_COLUMNS) + " |")
    lines.append("| --- |" + " ---: |" * len(_COLUMNS))
    rows = [_metric_row(doc) for doc in docs]
    for name, row in zip(names, rows):
        cells = " | ".join(f"{row[c]:.2f}%" for c in _COLUMNS)
        lines.append(f"| {name} | {cells} |")

    if len(rows) >= 2:
        first, last = rows[0], rows[-1]
        rel: dict[str, Optional[float]] = {}
        for c in _COLUMNS:
            rel[c] = None if first[c] == 0 else (last[c] - first[c]) / first[c] * 100.0
        defined = [v for v in rel.values() if v is not None]
        avg = f"{np.mean(defined):+.2f}%" if defined else "n/a"
        cells = " | ".join("n/a" if rel[c] is None else f"{rel[c]:+.2f}%" for c in _COLUMNS)
        lines.append(f"| Relative Improvements (AVG: {avg}) | {cells} |")

    note = docs[0]["metrics"]["fused"].get("note")
    if note:
        lines += ["", f"_{note}_"]
    lines.append("")

    csv_lines = ["run,epoch,total_loss,local_loss,global_loss,mean_view_cosine"]
    for name, doc in zip(names, docs):
        for rec in doc.get("curves", {}).get("views", []):
            csv_lines.append(
                f"{name},{rec['epoch']},{rec['total_loss']!r},"
                f"{rec['local_loss']!r},{rec['global_loss']!r},"
                f"{rec['mean_view_cosine']!r}"
            )
    csv_lines.append("")

    md_path = out_base + ".md"
    csv_path = out_base + "_curves.csv"
    try:
        _write_text(md_path, "\n".join(lines))
        _write_text(csv_path, "\n".join(csv_lines))
    except OSError as exc:
        raise DataError(f"emit_report: cannot write {out_base!r}: {exc}") from exc
    return md_path, csv_path
