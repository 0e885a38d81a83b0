"""Row-and-Column interactive module.

Factors a stage feature map into a row-wise (H x C) and a column-wise
(W x C) summary, attends each against the expression, and builds a rank-1
per-word location prior from the two axis attention maps.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

from ai.attention import attention_scores, gated_cross_attend
from core import ops
from core.errors import DimensionError, EmptyExpressionError
from core.parameters import ParameterStore
from core.tensor import Tensor

ROCO_TAG = "roco"


@dataclass
class AxisFeatures:
    """Axis summaries of one stage feature map."""
    v_h: Tensor  # H x C, row-wise (vertical axis)
    v_w: Tensor  # W x C, column-wise (horizontal axis)


@dataclass
class WordProjections:
    h_k: Tensor
    h_v: Tensor
    w_k: Tensor
    w_v: Tensor


@dataclass
class LocationPrior:
    """Per-word spatial distribution of the referent."""
    mask_roco: Tensor  # H x W x T, each word slice sums to 1
    e_h: Tensor  # H x T, softmax over rows
    e_w: Tensor  # W x T, softmax over columns


@dataclass
class RoCoParts:
    """Intermediate maps the fusion variants combine."""
    V: Tensor
    v_h: Tensor
    v_w: Tensor
    v_h_att: Tensor
    v_w_att: Tensor

    @property
    def height(self) -> int:
        return self.V.shape[0]

    @property
    def width(self) -> int:
        return self.V.shape[1]


@dataclass
class RoCoOutput:
    v_hw_all: Tensor
    prior: LocationPrior
    parts: RoCoParts


def expand_rows(v_h: Tensor, width: int) -> Tensor:
    """Bilinear expansion of an H x C row map to H x W x C (replication along width)."""
    height, channels = v_h.shape
    return ops.bilinear_resize(ops.reshape(v_h, (height, 1, channels)), (height, width))


def expand_columns(v_w: Tensor, height: int) -> Tensor:
    """Bilinear expansion of a W x C column map to H x W x C (replication along height)."""
    width, channels = v_w.shape
    return ops.bilinear_resize(ops.reshape(v_w, (1, width, channels)), (height, width))


def sum_of_expansions(parts: RoCoParts) -> Tensor:
    """B(v_h) + B(v_w) + B(v_h^Att) + B(v_w^Att), the default row/column combination."""
    rows = ops.add(expand_rows(parts.v_h, parts.width), expand_rows(parts.v_h_att, parts.width))
    cols = ops.add(expand_columns(parts.v_w, parts.height), expand_columns(parts.v_w_att, parts.height))
    return ops.add(rows, cols)


def location_prior(e_h: Tensor, e_w: Tensor) -> Tensor:
    """Per-word outer product of e_h[:, t] and e_w[:, t], normalized over H x W."""
    height, words = e_h.shape
    width = e_w.shape[0]
    if e_w.shape[1] != words:
        raise DimensionError(f"e_h {e_h.shape} and e_w {e_w.shape} disagree on word count")
    outer = ops.mul(ops.reshape(e_h, (height, 1, words)), ops.reshape(e_w, (1, width, words)))
    return ops.div(outer, ops.sum(outer, axis=(0, 1), keepdims=True))


class RoCo:
    """Row-and-Column interactive module for one pyramid stage."""

    def __init__(self, store: ParameterStore, prefix: str, channels: int, word_dim: int):
        """Register the module's projections.

        Args:
            store: Parameter store
            prefix: Stage name prefix, e.g. 'stage1'
            channels: Visual channel count C (also the word projection width)
            word_dim: Word embedding width d_l
        """
        self.store = store
        self.prefix = f"{prefix}.roco"
        self.channels = channels
        self.word_dim = word_dim
        self.logger = logging.getLogger(__name__)

        store.register_linear(f"{self.prefix}.row", channels, channels, owner=self.prefix)
        store.register_linear(f"{self.prefix}.col", channels, channels, owner=self.prefix)
        for name in ("h_k", "h_v", "w_k", "w_v"):
            store.register_linear(f"{self.prefix}.{name}", word_dim, channels, owner=self.prefix)

    def aggregate_axes(self, V: Tensor) -> AxisFeatures:
        """Average-pool V along each axis, then affine + GeLU."""
        if V.ndim != 3 or V.shape[0] < 1 or V.shape[1] < 1:
            raise DimensionError(f"aggregate_axes expects a non-empty H x W x C map, got {V.shape}")
        v_h = ops.gelu(ops.linear(ops.mean_pool(V, "width"), f"{self.prefix}.row", self.store))
        v_w = ops.gelu(ops.linear(ops.mean_pool(V, "height"), f"{self.prefix}.col", self.store))
        return AxisFeatures(v_h=v_h, v_w=v_w)

    def project_words(self, L: Tensor) -> WordProjections:
        """Four independent affine projections of the T x d_l word matrix."""
        if L.ndim != 2 or L.shape[0] == 0:
            raise EmptyExpressionError(f"RoCo needs at least one word, got expression shape {L.shape}")
        return WordProjections(
            **{name: ops.linear(L, f"{self.prefix}.{name}", self.store) for name in ("h_k", "h_v", "w_k", "w_v")}
        )

    def roco_interact(
        self,
        V: Tensor,
        L: Tensor,
        combine: Optional[Callable[[RoCoParts], Tensor]] = None,
    ) -> RoCoOutput:
        """Row/column cross-modal interaction and location prior.

        The H x T and W x T logits are computed once: softmax over words
        gives the axis attention, softmax over the spatial axis gives e_h / e_w.

        Args:
            V: H x W x C stage feature
            L: T x d_l expression embedding
            combine: Row/column combination (default: sum of the four expansions)

        Raises:
            EmptyExpressionError: If T == 0
        """
        if L.ndim != 2 or L.shape[0] == 0:
            raise EmptyExpressionError("RoCo received an expression with zero tokens")
        axes = self.aggregate_axes(V)
        words = self.project_words(L)

        row_scores = attention_scores(axes.v_h, words.h_k, ROCO_TAG)
        col_scores = attention_scores(axes.v_w, words.w_k, ROCO_TAG)
        v_h_att = gated_cross_attend(axes.v_h, words.h_k, words.h_v, scores=row_scores)
        v_w_att = gated_cross_attend(axes.v_w, words.w_k, words.w_v, scores=col_scores)

        e_h = ops.softmax(row_scores.logits, axis=0)
        e_w = ops.softmax(col_scores.logits, axis=0)
        prior = LocationPrior(mask_roco=location_prior(e_h, e_w), e_h=e_h, e_w=e_w)

        parts = RoCoParts(V=V, v_h=axes.v_h, v_w=axes.v_w, v_h_att=v_h_att, v_w_att=v_w_att)
        v_hw_all = (combine or sum_of_expansions)(parts)
        return RoCoOutput(v_hw_all=v_hw_all, prior=prior, parts=parts)
