"""Parity-penalized text classification over explicit and implicit cohorts."""

from .cohorts import CohortAssignment, ThresholdSpec, combine, derive_categorical
from .cohorts import derive_threshold, spectrum
from .data import Dataset, Example, SyntheticConfig, generate_synthetic, load_jsonl, split
from .model import ClassifierParams, ModelConfig
from .trainer import TrainConfig, TrainHistory, parity_penalty, train
from .userlm import LMConfig, LMModel, train_lm

__version__ = "0.1.0"

__all__ = [
    "CohortAssignment", "ThresholdSpec", "combine", "derive_categorical", "derive_threshold",
    "spectrum", "Dataset", "Example", "SyntheticConfig", "generate_synthetic", "load_jsonl",
    "split", "ClassifierParams", "ModelConfig", "TrainConfig", "TrainHistory",
    "parity_penalty", "train", "LMConfig", "LMModel", "train_lm",
]
