"""AdamW with decoupled weight decay and polynomial learning-rate decay."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from core.errors import ConfigurationError
from core.parameters import ParameterStore


@dataclass
class OptimizerState:
    """First/second moment accumulators keyed by parameter name."""
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


class PolynomialDecay:
    """lr_t = base_lr * (1 - t / total_steps) ** power, for step index t = 0, 1, ..."""

    def __init__(self, base_lr: float, total_steps: int, power: float = 0.9):
        if total_steps < 1:
            raise ConfigurationError(f"total_steps must be positive, got {total_steps}")
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.power = power

    def __call__(self, step: int) -> float:
        progress = min(step, self.total_steps) / self.total_steps
        return self.base_lr * (1.0 - progress) ** self.power


class AdamW:
    """Adam update with weight decay applied multiplicatively before it.

    p <- p * (1 - lr * wd)
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, store: ParameterStore, lr: float = 1e-3, weight_decay: float = 0.01,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0 or weight_decay < 0:
            raise ConfigurationError(f"lr and weight_decay must be non-negative, got {lr}, {weight_decay}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ConfigurationError(f"betas must lie in [0, 1), got {betas}")
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = tuple(betas)
        self.eps = eps
        self.state = OptimizerState(
            first_moment={name: np.zeros_like(t.data) for name, t in store.items()},
            second_moment={name: np.zeros_like(t.data) for name, t in store.items()},
        )
        self.logger = logging.getLogger(__name__)

    def step(self, grads: Mapping[str, np.ndarray], lr: Optional[float] = None) -> None:
        """Apply one update in parameter registration order.

        Args:
            grads: Name -> gradient for every parameter in the store
            lr: Learning rate for this step (default: base rate)
        """
        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.state.step += 1
        correction1 = 1.0 - beta1 ** self.state.step
        correction2 = 1.0 - beta2 ** self.state.step

        for name, tensor in self.store.items():
            grad = grads[name]
            m = self.state.first_moment[name] = beta1 * self.state.first_moment[name] + (1.0 - beta1) * grad
            v = self.state.second_moment[name] = beta2 * self.state.second_moment[name] + (1.0 - beta2) * grad * grad
            decayed = tensor.data * (1.0 - lr * self.weight_decay)
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            self.store.assign(name, decayed - lr * update)


def total_steps(samples: int, batch_size: int, epochs: int) -> int:
    return max(1, math.ceil(samples / batch_size) * epochs)
