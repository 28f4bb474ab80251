"""Variational inference over a kernel/image split of the parameter space."""

from .errors import (ConfigError, ContractError, FormatError, IncompatibleCheckpointError,
                     NumericalError, ShapeError, TrainingError, VikingError)
from .net import Batch, ModelSpec
from .posterior import Posterior
from .train import TrainConfig, TrainLog, posthoc_tune_sigmas, train_viking, warmup_mle

__all__ = [
    "Batch", "ConfigError", "ContractError", "FormatError", "IncompatibleCheckpointError",
    "ModelSpec", "NumericalError", "Posterior", "ShapeError", "TrainConfig", "TrainLog",
    "TrainingError", "VikingError", "posthoc_tune_sigmas", "train_viking", "warmup_mle",
]
