"""Adaptive sample weighting for curriculum learning, with live bound monitors."""

from .errors import (
    APWError,
    ConfigError,
    CoverageError,
    DivergenceError,
    GenerationError,
    InvalidInputError,
    NumericError,
)
from .scheduler import EpochUpdate, SchedulerConfig, epoch_step, mark_difficulty, update_weights, weight_change
from .weighting import WeightingMode

__all__ = [
    "APWError",
    "ConfigError",
    "CoverageError",
    "DivergenceError",
    "GenerationError",
    "InvalidInputError",
    "NumericError",
    "EpochUpdate",
    "SchedulerConfig",
    "WeightingMode",
    "epoch_step",
    "mark_difficulty",
    "update_weights",
    "weight_change",
]

__version__ = "0.1.0"
