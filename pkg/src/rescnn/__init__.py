"""Residual and plain 1-D convolutional models for noisy relation extraction,
on a small numpy-only autodiff core, with held-out ranking evaluation."""

from . import autodiff, dataset, embeddings, evaluation, experiments, model, training
from .errors import (
    DataError,
    NumericsError,
    ShapeError,
    TrainingDivergence,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "dataset",
    "embeddings",
    "evaluation",
    "experiments",
    "model",
    "training",
    "DataError",
    "NumericsError",
    "ShapeError",
    "TrainingDivergence",
    "UsageError",
    "__version__",
]
