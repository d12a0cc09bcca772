"""Graph-neural recommendation of glass-forming element pairs and triples."""

from .dataset import (
    AlloyRecord,
    EmbeddingTable,
    build_negative_pool,
    generate_synthetic,
    load_alloys,
    load_embeddings,
    stratified_folds,
)
from .estimator import GlassRecommender, bpr_loss
from .metrics import RankedResult, ndcg_at_k, recall_at_k
from .models import Encoder, ModelConfig
from .network import MaterialNetwork, build_network, enumerate_candidates, normalized_adjacency
from .scoring import Scorer, rank_candidates, score_pair, score_triple
from .training import TrainConfig, evaluate_task, grid_search, prepare_task, train_trial

__version__ = "0.1.0"

__all__ = [
    "AlloyRecord", "EmbeddingTable", "Encoder", "GlassRecommender", "MaterialNetwork",
    "ModelConfig", "RankedResult", "Scorer", "TrainConfig", "bpr_loss",
    "build_negative_pool", "build_network", "enumerate_candidates", "evaluate_task",
    "generate_synthetic", "grid_search", "load_alloys", "load_embeddings", "ndcg_at_k",
    "normalized_adjacency", "prepare_task", "rank_candidates", "recall_at_k", "score_pair",
    "score_triple", "stratified_folds", "train_trial",
]
