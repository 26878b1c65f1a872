"""Cross-encoder reranker service.

Fine-tunes a pair-scoring model on the engine's usefulness labels and
serves scores over POST /score for external reranking.
"""

from .data import LabeledPair, load_labeled_pairs
from .errors import BaseModelUnavailable, RerankerServiceError, SingleClassLabels
from .metrics import ranking_auc
from .model import (
    BASE_MODELS,
    TinyPairScorer,
    encode_pair,
    load_artifact,
    load_base_model,
    save_artifact,
    score_pairs,
    token_ids,
)
from .serving import create_app
from .training import TrainSpec, train

__all__ = [
    "BASE_MODELS",
    "BaseModelUnavailable",
    "LabeledPair",
    "RerankerServiceError",
    "SingleClassLabels",
    "TinyPairScorer",
    "TrainSpec",
    "create_app",
    "encode_pair",
    "load_artifact",
    "load_base_model",
    "load_labeled_pairs",
    "ranking_auc",
    "save_artifact",
    "score_pairs",
    "token_ids",
    "train",
]
