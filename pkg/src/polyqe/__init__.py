"""Retrieval-augmented machine translation quality estimation.

Embedding-feature regression over (source, translation) pairs, extended
with additional candidate translations of the same source and with
retrieved human-scored in-context examples, plus nearest-neighbor and
LLM-judge baselines and a segment-level evaluation harness.
"""

from .corpus import AnnotatedSegment, MqmAnnotation, load_dataset, mqm_to_score, split_by_langpair
from .embedstore import EmbeddingStore, cosine, fallback_embed, load_embeddings, write_embeddings
from .features import (
    FeatureLayout,
    FeatureVector,
    base_features,
    feature_length,
    polycand_features,
    polyic_features,
    with_reference,
)
from .head import (
    MlpHead,
    MlpScoreRegressor,
    TrainConfig,
    forward,
    forward_batch,
    gradients,
    load_checkpoint,
    loss,
    new_head,
    save_checkpoint,
    train,
)
from .knnqe import KernelConfig, KernelKnnRegressor, knn_polycand, knn_polyic, tune_gamma
from .metrics import EvalReport, evaluate, kendall_tau_b, mae, pearson
from .retrieval import (
    Closest,
    Nth,
    RandomPick,
    RetrievalIndex,
    RetrievalQuery,
    build_index,
    candidates_same_source,
    topk,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedSegment",
    "MqmAnnotation",
    "load_dataset",
    "mqm_to_score",
    "split_by_langpair",
    "EmbeddingStore",
    "cosine",
    "fallback_embed",
    "load_embeddings",
    "write_embeddings",
    "FeatureLayout",
    "FeatureVector",
    "base_features",
    "feature_length",
    "polycand_features",
    "polyic_features",
    "with_reference",
    "MlpHead",
    "MlpScoreRegressor",
    "TrainConfig",
    "forward",
    "forward_batch",
    "gradients",
    "load_checkpoint",
    "loss",
    "new_head",
    "save_checkpoint",
    "train",
    "KernelConfig",
    "KernelKnnRegressor",
    "knn_polycand",
    "knn_polyic",
    "tune_gamma",
    "EvalReport",
    "evaluate",
    "kendall_tau_b",
    "mae",
    "pearson",
    "Closest",
    "Nth",
    "RandomPick",
    "RetrievalIndex",
    "RetrievalQuery",
    "build_index",
    "candidates_same_source",
    "topk",
]
