"""Guided Holistic interactive module."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from ai.attention import attention_scores
from core import ops
from core.errors import DimensionError, EmptyExpressionError
from core.parameters import ParameterStore
from core.tensor import Tensor

HOLI_TAG = "holi"


@dataclass
class HolisticProjection:
    v_g: Tensor  # H x W x C
    g_k: Tensor  # T x C
    g_v: Tensor  # T x C


@dataclass
class HolisticMasks:
    """Pixel-word attention maps.

    mask_holi sums to 1 over words at every pixel; mask_roho is the
    elementwise mean of the location prior and mask_holi (or mask_holi
    itself when no prior is given).
    """
    mask_holi: Tensor  # H x W x T
    mask_roho: Tensor  # H x W x T


def guided_attend(
    v_g: Tensor,
    g_k: Tensor,
    g_v: Tensor,
    mask_roco: Optional[Tensor] = None,
    renormalize: bool = False,
) -> Tuple[Tensor, HolisticMasks]:
    """Pixel-word attention gated by the row/column location prior.

    Args:
        v_g: H x W x C holistic visual feature
        g_k: T x C word keys
        g_v: T x C word values
        mask_roco: H x W x T location prior; None runs the unguided baseline
        renormalize: Rescale mask_roho to sum 1 over words at every pixel

    Returns:
        (v_g_all, masks) with v_g_all = (mask_roho . g_v) * v_g

    Raises:
        DimensionError: If the prior's shape differs from H x W x T
    """
    height, width, channels = v_g.shape
    words = g_k.shape[0]
    if words == 0:
        raise EmptyExpressionError("Holistic attention received an expression with zero tokens")

    pixels = ops.reshape(v_g, (height * width, channels))
    scores = attention_scores(pixels, g_k, HOLI_TAG)
    mask_holi = ops.reshape(scores.weights, (height, width, words))

    if mask_roco is None:
        mask_roho = mask_holi
    else:
        if mask_roco.shape != mask_holi.shape:
            raise DimensionError(f"Location prior {mask_roco.shape} does not match attention {mask_holi.shape}")
        mask_roho = ops.scale(ops.add(mask_roco, mask_holi), 0.5)
    if renormalize:
        mask_roho = ops.div(mask_roho, ops.sum(mask_roho, axis=2, keepdims=True))

    linguistic = ops.matmul(ops.reshape(mask_roho, (height * width, words)), g_v)
    v_g_all = ops.mul(ops.reshape(linguistic, (height, width, channels)), v_g)
    return v_g_all, HolisticMasks(mask_holi=mask_holi, mask_roho=mask_roho)


class Holi:
    """Holistic projections for one pyramid stage."""

    def __init__(self, store: ParameterStore, prefix: str, channels: int, word_dim: int,
                 renormalize: bool = False):
        self.store = store
        self.prefix = f"{prefix}.holi"
        self.renormalize = renormalize
        self.logger = logging.getLogger(__name__)

        store.register_linear(f"{self.prefix}.visual", channels, channels, owner=self.prefix)
        store.register_linear(f"{self.prefix}.g_k", word_dim, channels, owner=self.prefix)
        store.register_linear(f"{self.prefix}.g_v", word_dim, channels, owner=self.prefix)

    def holistic_project(self, V: Tensor, L: Tensor) -> HolisticProjection:
        """Affine projections of the stage feature and the words."""
        if V.ndim != 3:
            raise DimensionError(f"holistic_project expects H x W x C, got {V.shape}")
        return HolisticProjection(
            v_g=ops.linear(V, f"{self.prefix}.visual", self.store),
            g_k=ops.linear(L, f"{self.prefix}.g_k", self.store),
            g_v=ops.linear(L, f"{self.prefix}.g_v", self.store),
        )

    def interact(self, V: Tensor, L: Tensor, mask_roco: Optional[Tensor] = None) -> Tuple[Tensor, HolisticMasks]:
        projection = self.holistic_project(V, L)
        return guided_attend(projection.v_g, projection.g_k, projection.g_v, mask_roco, self.renormalize)
