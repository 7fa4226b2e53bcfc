"""Curation and evaluation engine for contrastive code retrieval."""

from .corpus import (
    FilterDecision,
    IngestResult,
    PairRecord,
    PrefilterConfig,
    extract_docstring,
    ingest_pairs,
    prefilter,
)
from .curation import (
    CuratedPair,
    FilterParams,
    MiningParams,
    NegativePool,
    audit_pairs,
    build_negative_pools,
    consistency_filter,
)
from .embedder import StubEmbeddingProvider, VectorStore, embed_corpus, stub_embed
from .contrastive import ContrastiveBatchTensors, encode, infonce_grad, infonce_loss, train_toy
from .ranker import MetricReport, RankedList, SearchIndex, compute_metrics
from .rerank import RerankParams, gen_listwise_data, parse_and_repair, sliding_rerank
from .localize import FunctionRecord, GoldLabels, eval_localization, file_rollup, localize
from .sampler import CurriculumSchedule, TrainingBatch, emit_batches, sample_negatives, tau_at
from .simgraph import SimilarityCache, brute_force_neighbors, compute_neighbors

__version__ = "0.1.0"

__all__ = [
    "ContrastiveBatchTensors",
    "CuratedPair",
    "CurriculumSchedule",
    "FilterDecision",
    "FilterParams",
    "FunctionRecord",
    "GoldLabels",
    "IngestResult",
    "MetricReport",
    "MiningParams",
    "NegativePool",
    "PairRecord",
    "PrefilterConfig",
    "RankedList",
    "RerankParams",
    "SearchIndex",
    "SimilarityCache",
    "StubEmbeddingProvider",
    "TrainingBatch",
    "VectorStore",
    "audit_pairs",
    "brute_force_neighbors",
    "build_negative_pools",
    "compute_metrics",
    "compute_neighbors",
    "consistency_filter",
    "embed_corpus",
    "emit_batches",
    "encode",
    "eval_localization",
    "extract_docstring",
    "file_rollup",
    "gen_listwise_data",
    "infonce_grad",
    "infonce_loss",
    "ingest_pairs",
    "localize",
    "parse_and_repair",
    "prefilter",
    "sample_negatives",
    "sliding_rerank",
    "stub_embed",
    "tau_at",
    "train_toy",
]
