"""Hypersphere embedding learning with Sphere Loss, PK sampling and warmup."""

from .estimator import SphereReID, TrainLog, embed_dataset
from .evaluation import RetrievalReport, evaluate, rank_gallery
from .train import ExperimentConfig, run_experiment

__all__ = [
    "ExperimentConfig",
    "RetrievalReport",
    "SphereReID",
    "TrainLog",
    "embed_dataset",
    "evaluate",
    "rank_gallery",
    "run_experiment",
]
__version__ = "0.1.0"
