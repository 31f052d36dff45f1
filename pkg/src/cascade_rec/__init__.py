"""Cooperative training of a cascaded retriever and ranker, in plain numpy."""

from .config import ConfigError, ExperimentSpec, TrainConfig
from .dataset import Context, DataError, InteractionDataset, ingest, synthesize
from .evaluation import EvalConfig, MetricsReport, evaluate
from .models import Ranker, Retriever
from .trainer import NumericalError, train, train_independent

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Context", "DataError", "EvalConfig", "ExperimentSpec", "InteractionDataset",
    "MetricsReport", "NumericalError", "Ranker", "Retriever", "TrainConfig", "evaluate", "ingest",
    "synthesize", "train", "train_independent",
]
