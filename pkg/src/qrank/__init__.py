"""Multi-view contrastive training, knowledge retrieval, and fused ranking.

The package turns a table of image embeddings into n trained views per item,
retrieves one knowledge entry per view from an external corpus, learns scalar
relevance weights for every embedding, and ranks candidate labels with the
weighted fusion. Everything is deterministic given a seed, file-backed in the
`.qemb` format, and drivable from the `qrank` CLI.
"""

from .config import RunConfig, apply_overrides, load_config_file, resolve_config
from .corpus import (
    KIND_IMAGE_VIEW,
    KIND_LABEL,
    KIND_OWK,
    KIND_PARAM,
    KIND_TEXT,
    KnowledgeCorpus,
    LabelSpace,
    MultiViewEmbedding,
    ViewEmbeddingSet,
    load_corpus,
    load_params,
    load_typed,
    normalized_copy,
    read_qemb,
    save_corpus,
    save_params,
    sidecar_path,
    write_qemb,
)
from .errors import ConfigError, DataError, NumericError, QrankError
from .losses import (
    DEFAULT_LAMBDA,
    DEFAULT_TEMPERATURE,
    dynamic_weights,
    global_loss,
    local_loss,
    mvc_loss,
    mvr_loss,
    total_loss,
)
from .metrics import (
    EvalReport,
    HierarchicalLabel,
    RankMetrics,
    evaluate_run,
    example_f1,
    macro_f1,
    parse_hierarchy,
    rank_metrics,
)
from .pipeline import PipelineResult, StageInfo, STAGES, emit_report, run_pipeline
from .retrieval import (
    MODE_DISTINCT,
    MODE_PROPOSED,
    MODE_UNIFORM,
    MODES,
    KnowledgeSearcher,
    RetrievalResult,
    duplication_rate,
    resolve_thread_count,
    search_owk_per_view,
    search_topk,
)
from .scorer import (
    FusedFeature,
    RelevanceScorer,
    ScorerParams,
    ScorerTrainConfig,
    fuse,
    init_scorer_params,
    rank_labels_fused,
    score_embedding,
    scorer_loss,
    train_scorer,
    train_scorer_on_features,
)
from .synth import SyntheticSpec, generate_synthetic
from .vectors import l2_normalize, mean_pairwise_cosine, normalize_rows
from .views import (
    MultiViewEncoder,
    ViewHeadParams,
    ViewTrainConfig,
    init_view_params,
    project_views,
    rank_labels_multiview,
    train_view_head,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DEFAULT_LAMBDA",
    "DEFAULT_TEMPERATURE",
    "EvalReport",
    "FusedFeature",
    "HierarchicalLabel",
    "KIND_IMAGE_VIEW",
    "KIND_LABEL",
    "KIND_OWK",
    "KIND_PARAM",
    "KIND_TEXT",
    "KnowledgeCorpus",
    "KnowledgeSearcher",
    "LabelSpace",
    "MODE_DISTINCT",
    "MODE_PROPOSED",
    "MODE_UNIFORM",
    "MODES",
    "MultiViewEmbedding",
    "MultiViewEncoder",
    "NumericError",
    "PipelineResult",
    "QrankError",
    "RankMetrics",
    "RelevanceScorer",
    "RetrievalResult",
    "RunConfig",
    "STAGES",
    "ScorerParams",
    "ScorerTrainConfig",
    "StageInfo",
    "SyntheticSpec",
    "ViewEmbeddingSet",
    "ViewHeadParams",
    "ViewTrainConfig",
    "apply_overrides",
    "duplication_rate",
    "dynamic_weights",
    "emit_report",
    "evaluate_run",
    "example_f1",
    "fuse",
    "generate_synthetic",
    "global_loss",
    "init_scorer_params",
    "init_view_params",
    "l2_normalize",
    "load_config_file",
    "load_corpus",
    "load_params",
    "load_typed",
    "local_loss",
    "macro_f1",
    "mean_pairwise_cosine",
    "mvc_loss",
    "mvr_loss",
    "normalize_rows",
    "normalized_copy",
    "parse_hierarchy",
    "project_views",
    "rank_labels_fused",
    "rank_labels_multiview",
    "rank_metrics",
    "read_qemb",
    "resolve_config",
    "resolve_thread_count",
    "run_pipeline",
    "save_corpus",
    "save_params",
    "score_embedding",
    "scorer_loss",
    "search_owk_per_view",
    "search_topk",
    "sidecar_path",
    "total_loss",
    "train_scorer",
    "train_scorer_on_features",
    "train_view_head",
    "write_qemb",
]
