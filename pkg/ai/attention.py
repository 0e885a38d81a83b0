"""Single-head scaled dot-product attention and gated cross-modal attention."""

import contextvars
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from core import ops
from core.errors import DimensionError
from core.tensor import Tensor

logger = logging.getLogger(__name__)

_active_counter: contextvars.ContextVar[Optional["LogitCounter"]] = contextvars.ContextVar(
    "cprn_logit_counter", default=None
)


class LogitCounter:
    """Counts attention logits computed inside a `with` block, per tag.

    Example:
        with LogitCounter() as counter:
            model.forward(...)
        counter.counts["roco"], counter.counts["holi"]
    """

    def __init__(self):
        self.counts: Counter = Counter()
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "LogitCounter":
        self._token = _active_counter.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _active_counter.reset(self._token)
        self._token = None
        return False

    def add(self, tag: str, count: int) -> None:
        self.counts[tag] += count

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class AttentionScores:
    """Logits and key-axis softmax weights of one attention call."""
    logits: Tensor  # q x k, already scaled
    weights: Tensor  # q x k, rows sum to 1
    scale: float  # 1/sqrt(d_k)


def attention_scores(query: Tensor, keys: Tensor, tag: str = "attention") -> AttentionScores:
    """Scaled logits QK^T/sqrt(d) and their softmax over the key axis.

    Args:
        query: q x d tensor
        keys: k x d tensor
        tag: Counter bucket for the q*k logits computed here

    Raises:
        DimensionError: If query and keys differ in width
    """
    if query.ndim != 2 or keys.ndim != 2:
        raise DimensionError(f"attention expects rank-2 query/keys, got {query.shape} and {keys.shape}")
    if query.shape[1] != keys.shape[1]:
        raise DimensionError(f"query width {query.shape[1]} != key width {keys.shape[1]}")
    scale = 1.0 / math.sqrt(keys.shape[1])
    logits = ops.scale(ops.matmul(query, ops.transpose(keys)), scale)

    counter = _active_counter.get()
    if counter is not None:
        counter.add(tag, query.shape[0] * keys.shape[0])

    return AttentionScores(logits=logits, weights=ops.softmax(logits, axis=1), scale=scale)


def attend(query: Tensor, keys: Tensor, values: Tensor, tag: str = "attention") -> Tensor:
    """softmax(QK^T / sqrt(d)) V.

    Raises:
        DimensionError: If Q/K widths differ or K/V row counts differ
    """
    if values.ndim != 2 or keys.shape[0] != values.shape[0]:
        raise DimensionError(f"keys {keys.shape} and values {values.shape} differ in row count")
    scores = attention_scores(query, keys, tag)
    return ops.matmul(scores.weights, values)


def gated_cross_attend(
    visual: Tensor,
    word_keys: Tensor,
    word_values: Tensor,
    scores: Optional[AttentionScores] = None,
    tag: str = "attention",
) -> Tensor:
    """Attend visual rows over word keys, then gate elementwise by the visual rows.

    Args:
        visual: s x C visual features (queries and gate)
        word_keys: T x C
        word_values: T x C
        scores: Precomputed visual/word scores to reuse

    Returns:
        s x C tensor attend(visual, word_keys, word_values) * visual
    """
    if word_values.ndim != 2 or word_values.shape[1] != visual.shape[1]:
        raise DimensionError(f"word values {word_values.shape} do not match visual width {visual.shape}")
    if scores is None:
        scores = attention_scores(visual, word_keys, tag)
    if word_keys.shape[0] != word_values.shape[0]:
        raise DimensionError(f"word keys {word_keys.shape} and values {word_values.shape} differ in length")
    return ops.mul(ops.matmul(scores.weights, word_values), visual)
