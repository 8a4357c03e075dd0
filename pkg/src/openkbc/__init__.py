"""Interactive open-world knowledge-base completion engine."""

from .embeddings import EmbeddingProvider, load_embeddings, synthesize_embeddings
from .engine import Engine, EngineConfig, PredictionManager
from .executor import Answer, DataBuffers, Executor, GuessThresholds, Params, Question
from .kb import (
    KnowledgeGraph,
    KnowledgeStore,
    QueryTriple,
    Triple,
    inverse,
    load_triples_tsv,
)
from .mdp import Action, judge_action
from .paths import FeatureSet, PathFeature, WalkConfig, extract_features
from .predictor import RelationModel, TrainingConfig, train_model
from .strategy import DataInstance, EpisodeResult, InferenceStack, QTable, run_episode
from .training import train_policy

__all__ = [
    "Action",
    "Answer",
    "DataBuffers",
    "DataInstance",
    "EmbeddingProvider",
    "Engine",
    "EngineConfig",
    "EpisodeResult",
    "Executor",
    "FeatureSet",
    "GuessThresholds",
    "InferenceStack",
    "KnowledgeGraph",
    "KnowledgeStore",
    "Params",
    "PathFeature",
    "PredictionManager",
    "QTable",
    "QueryTriple",
    "Question",
    "RelationModel",
    "Triple",
    "TrainingConfig",
    "WalkConfig",
    "extract_features",
    "inverse",
    "judge_action",
    "load_embeddings",
    "load_triples_tsv",
    "run_episode",
    "synthesize_embeddings",
    "train_model",
    "train_policy",
]

__version__ = "0.1.0"
