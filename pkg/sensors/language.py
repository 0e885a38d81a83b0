"""Expression vocabulary and trainable lookup embedding."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from core import ops
from core.errors import ConfigurationError, DimensionError
from core.parameters import ParameterStore
from core.tensor import Tensor, get_default_dtype

PAD = "<pad>"
UNK = "<unk>"

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "large")
RELATIONS = ("left", "right", "above", "below")
SUPERLATIVES = ("leftmost", "rightmost", "topmost", "bottommost")

VOCABULARY: tuple = (PAD, UNK, "the") + SIZES + COLORS + SHAPES + RELATIONS + ("of", "that", "is", "and") + SUPERLATIVES

# Longest accepted expression
MAX_TOKENS = 20


class Vocabulary:
    """Fixed word <-> id table; id 0 is padding."""

    def __init__(self, words: Sequence[str] = VOCABULARY):
        if not words or words[0] != PAD:
            raise ConfigurationError(f"Vocabulary must start with {PAD}")
        self.words = tuple(words)
        self.index: Dict[str, int] = {word: i for i, word in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return 0

    def encode(self, text: str) -> List[int]:
        unk = self.index[UNK]
        return [self.index.get(word, unk) for word in text.lower().split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids if i != self.pad_id)


@dataclass
class Expression:
    tokens: List[int]
    embedding: Tensor  # max_tokens x d_l, zero rows past the expression length

    @property
    def length(self) -> int:
        return len(self.tokens)


class ExpressionEncoder:
    """Lookup-table word embedding, zero-padded to a fixed length."""

    def __init__(self, store: ParameterStore, vocab_size: int, word_dim: int, max_tokens: int = MAX_TOKENS):
        self.store = store
        self.vocab_size = vocab_size
        self.word_dim = word_dim
        self.max_tokens = max_tokens
        self.logger = logging.getLogger(__name__)
        store.register("language.embedding", (vocab_size, word_dim), fan_in=word_dim, owner="language")

    def embed_expression(self, tokens: Sequence[int]) -> Expression:
        """Embed token ids into a max_tokens x d_l matrix.

        Padded positions are multiplied by zero, so they embed to the zero
        vector and send no gradient to any table row.

        Raises:
            DimensionError: If the expression is longer than max_tokens
            ConfigurationError: If an id is outside the vocabulary
        """
        tokens = [int(t) for t in tokens]
        if len(tokens) > self.max_tokens:
            raise DimensionError(f"Expression has {len(tokens)} tokens, limit is {self.max_tokens}")
        if any(t < 0 or t >= self.vocab_size for t in tokens):
            raise ConfigurationError(f"Token id outside vocabulary of size {self.vocab_size}: {tokens}")

        padded = tokens + [0] * (self.max_tokens - len(tokens))
        keep = np.zeros((self.max_tokens, 1), dtype=get_default_dtype())
        keep[: len(tokens)] = 1.0
        rows = ops.gather_rows(self.store["language.embedding"], padded)
        return Expression(tokens=tokens, embedding=ops.mul(rows, ops.constant(keep)))
