"""Synthetic data, the classifier, training and evaluation."""

from .config import ConfigError, SynthSpec, TrainConfig
from .synth import Dataset, gen_synthetic, train_test

__all__ = ["ConfigError", "Dataset", "SynthSpec", "TrainConfig", "gen_synthetic", "train_test"]
