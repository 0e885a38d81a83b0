"""Central finite-difference gradient checker."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from core.errors import GradientError
from core.tensor import GradTape, Tensor, backward

logger = logging.getLogger(__name__)

# Norms below this count as an exact zero gradient
ZERO_NORM = 1e-10


@dataclass
class GradCheckReport:
    """Outcome of a gradient check.

    Attributes:
        errors: Relative error ||a - n|| / max(||a||, ||n||) per tensor name
        max_error: Largest relative error
        worst: Name with the largest error
        passed: Whether every error is below the tolerance
    """
    errors: Dict[str, float] = field(default_factory=dict)
    max_error: float = 0.0
    worst: Optional[str] = None
    passed: bool = True
    tolerance: float = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative L2 error; 0 when both gradients vanish."""
    a_norm = float(np.linalg.norm(analytic))
    n_norm = float(np.linalg.norm(numeric))
    if a_norm < ZERO_NORM and n_norm < ZERO_NORM:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / max(a_norm, n_norm)


def numeric_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn() w.r.t. one tensor.

    loss_fn is evaluated outside any tape; the tensor's buffer is swapped
    for a perturbed copy and restored afterwards.
    """
    original = tensor.data
    work = np.array(original, dtype=np.float64)
    grad = np.zeros_like(work)
    try:
        for index in np.ndindex(work.shape):
            saved = work[index]
            work[index] = saved + step
            tensor.data = work.astype(original.dtype)
            plus = loss_fn().item()
            work[index] = saved - step
            tensor.data = work.astype(original.dtype)
            minus = loss_fn().item()
            work[index] = saved
            grad[index] = (plus - minus) / (2.0 * step)
    finally:
        tensor.data = original
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Args:
        loss_fn: Zero-argument callable building a scalar loss from `tensors`
        tensors: Name -> tensor mapping to check (usually a ParameterStore)
        step: Finite-difference step
        tolerance: Maximum accepted relative error

    Returns:
        GradCheckReport
    """
    if any(t.dtype != np.float64 for t in tensors.values()):
        raise GradientError("Gradient checks need float64 tensors")

    with GradTape():
        loss = loss_fn()
    analytic = backward(loss, tensors)

    report = GradCheckReport(tolerance=tolerance)
    for name, tensor in tensors.items():
        numeric = numeric_gradient(loss_fn, tensor, step)
        error = relative_error(analytic[name], numeric)
        report.errors[name] = error
        if report.worst is None or error > report.max_error:
            report.max_error = error
            report.worst = name
    report.passed = report.max_error < tolerance

    if report.passed:
        logger.info(f"Gradient check passed on {len(report.errors)} tensors (max error {report.max_error:.2e})")
    else:
        logger.warning(f"Gradient check failed: {report.worst} has relative error {report.max_error:.2e}")
    return report
