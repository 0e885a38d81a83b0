"""Error types shared across the CPRN workbench.

Each error also derives from the builtin a caller would naturally catch
(ValueError for bad inputs, RuntimeError for failures during a run).
"""

from pathlib import Path
from typing import List, Optional, Union


class CPRNError(Exception):
    """Root of all workbench errors."""


class DimensionError(CPRNError, ValueError):
    """Tensor extents do not fit the operation."""


class ConfigurationError(CPRNError, ValueError):
    """Unknown parameter, variant, fusion kind or invalid configuration value."""


class EmptyExpressionError(CPRNError, ValueError):
    """An expression with zero tokens reached a cross-modal module."""


class EmptyEvaluationError(CPRNError, ValueError):
    """Metrics were requested over an empty record list."""


class GradientError(CPRNError, RuntimeError):
    """Backward pass misuse (non-scalar loss, missing tape, consumed tape)."""


class CheckpointError(CPRNError, ValueError):
    """Checkpoint payload is malformed or does not match the parameter store."""


class DatasetError(CPRNError, ValueError):
    """Dataset directory, manifest or format version is invalid."""


class TrainingDivergedError(CPRNError, RuntimeError):
    """Loss became NaN or infinite during training.

    Attributes:
        batch_id: Sample ids of the offending batch
        dump_path: divergence.json written before raising, if any
    """

    def __init__(self, message: str, batch_id: List[int], dump_path: Optional[Union[str, Path]] = None):
        super().__init__(message)
        self.batch_id = batch_id
        self.dump_path = dump_path
