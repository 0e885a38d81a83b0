"""Package initializer for core."""

from .errors import (
    CPRNError,
    CheckpointError,
    ConfigurationError,
    DatasetError,
    DimensionError,
    EmptyEvaluationError,
    EmptyExpressionError,
    GradientError,
    TrainingDivergedError,
)
from .tensor import GradTape, GradientMap, Tensor, backward, get_default_dtype, set_default_dtype
from .parameters import ParameterStore

__all__: list[str] = [
    "CPRNError",
    "CheckpointError",
    "ConfigurationError",
    "DatasetError",
    "DimensionError",
    "EmptyEvaluationError",
    "EmptyExpressionError",
    "GradientError",
    "TrainingDivergedError",
    "GradTape",
    "GradientMap",
    "Tensor",
    "backward",
    "get_default_dtype",
    "set_default_dtype",
    "ParameterStore",
]
