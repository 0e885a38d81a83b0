"""Full referring-segmentation model: backbone, word embedding, stage blocks, decoder."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ai.decoder import Decoder, DecoderState, bce_loss
from ai.fusion import StageFunction, StageModules, StageOutput, build_stage_modules, compose_block
from ai.attention import attention_scores, gated_cross_attend
from ai.holi import guided_attend
from ai.roco import ROCO_TAG, LocationPrior, RoCoParts, location_prior, sum_of_expansions
from core import ops
from core.errors import EmptyExpressionError
from core.parameters import ParameterStore
from core.tensor import Tensor
from sensors.language import MAX_TOKENS, VOCABULARY, ExpressionEncoder
from sensors.vision_backbone import VisionBackbone


@dataclass
class ModelConfig:
    """Architecture hyperparameters."""
    image_size: int = 64
    channels: int = 32
    word_dim: int = 32
    stages: int = 4
    vocab_size: int = len(VOCABULARY)
    max_tokens: int = MAX_TOKENS
    variant: str = "parallel_guided"
    fusion: str = "eq5"
    ffn: bool = True
    ape: bool = True
    ffn_hidden: Optional[int] = None
    dropout: float = 0.1
    zero_init_ffn: bool = True
    renormalize_guidance: bool = False
    decoder_wiring: str = "consume_all"
    upsample_logits: bool = False
    seed: int = 0

    @property
    def is_full_block(self) -> bool:
        """Guided parallel block with FFN, ape and the default row/column sum."""
        return self.variant == "parallel_guided" and self.ffn and self.ape and self.fusion == "eq5"


class CPRNBlock:
    """Hand-wired full stage: ape, RoCo, guided Holi, FFN merge."""

    def __init__(self, modules: StageModules):
        self.modules = modules

    def forward(self, V: Tensor, L: Tensor, rng: Optional[np.random.Generator] = None) -> StageOutput:
        modules = self.modules
        roco, holi, merge = modules.roco, modules.holi, modules.merge
        V = ops.add(V, merge.store[modules.ape])

        # Row/column pathway
        if L.shape[0] == 0:
            raise EmptyExpressionError("RoCo received an expression with zero tokens")
        axes = roco.aggregate_axes(V)
        words = roco.project_words(L)
        row_scores = attention_scores(axes.v_h, words.h_k, ROCO_TAG)
        col_scores = attention_scores(axes.v_w, words.w_k, ROCO_TAG)
        v_h_att = gated_cross_attend(axes.v_h, words.h_k, words.h_v, scores=row_scores)
        v_w_att = gated_cross_attend(axes.v_w, words.w_k, words.w_v, scores=col_scores)
        e_h = ops.softmax(row_scores.logits, axis=0)
        e_w = ops.softmax(col_scores.logits, axis=0)
        prior = LocationPrior(mask_roco=location_prior(e_h, e_w), e_h=e_h, e_w=e_w)
        v_hw_all = sum_of_expansions(RoCoParts(V=V, v_h=axes.v_h, v_w=axes.v_w, v_h_att=v_h_att, v_w_att=v_w_att))

        # Holistic pathway guided by the prior
        projection = holi.holistic_project(V, L)
        v_g_all, masks = guided_attend(projection.v_g, projection.g_k, projection.g_v,
                                       prior.mask_roco, holi.renormalize)

        F = merge.merge_paths(v_hw_all, v_g_all, V, rng)
        return StageOutput(F=F, v_hw_all=v_hw_all, v_g_all=v_g_all, prior=prior, masks=masks)

    __call__ = forward


@dataclass
class ModelOutput:
    score_map: Tensor  # H0 x W0
    stages: List[StageOutput] = field(default_factory=list)
    decoder: Optional[DecoderState] = None


class CPRNModel:
    """Referring segmentation network over a shared ParameterStore."""

    def __init__(self, config: ModelConfig, store: Optional[ParameterStore] = None):
        self.config = config
        self.store = store if store is not None else ParameterStore(seed=config.seed)
        self.logger = logging.getLogger(__name__)

        self.backbone = VisionBackbone(self.store, config.image_size, config.channels, config.stages)
        self.language = ExpressionEncoder(self.store, config.vocab_size, config.word_dim, config.max_tokens)

        self.stage_modules: List[StageModules] = []
        self.blocks: List[StageFunction] = []
        for stage in range(1, config.stages + 1):
            modules = build_stage_modules(
                self.store, f"stage{stage}", config.variant, config.channels, config.word_dim,
                self.backbone.stage_size(stage), fusion=config.fusion, ffn=config.ffn, ape=config.ape,
                ffn_hidden=config.ffn_hidden, dropout=config.dropout, zero_init_ffn=config.zero_init_ffn,
                renormalize=config.renormalize_guidance,
            )
            self.stage_modules.append(modules)
            if config.is_full_block:
                self.blocks.append(CPRNBlock(modules))
            else:
                self.blocks.append(compose_block(config.variant, modules, ffn=config.ffn, ape=config.ape))

        self.decoder = Decoder(self.store, config.stages, config.channels,
                               wiring=config.decoder_wiring, upsample_logits=config.upsample_logits)
        self.logger.info(
            f"Built {config.variant}/{config.fusion} model: {config.stages} stages, "
            f"{len(self.store)} tensors, {self.store.num_elements()} parameters"
        )

    def forward(self, image: np.ndarray, tokens: Sequence[int],
                rng: Optional[np.random.Generator] = None) -> ModelOutput:
        """Score map for one image/expression pair.

        Args:
            image: H0 x W0 x 3 array in [0, 1]
            tokens: Expression token ids
            rng: Dropout generator (None disables dropout)

        Raises:
            EmptyExpressionError: If tokens is empty
        """
        if len(tokens) == 0:
            raise EmptyExpressionError("Cannot segment with an empty expression")
        pyramid = self.backbone.encode_pyramid(image)
        expression = self.language.embed_expression(tokens)
        stages = [block(V, expression.embedding, rng) for block, V in zip(self.blocks, pyramid.fused)]
        state = self.decoder.run([s.F for s in stages], output_size=image.shape[:2])
        return ModelOutput(score_map=state.score_map, stages=stages, decoder=state)

    def loss(self, image: np.ndarray, tokens: Sequence[int], truth: np.ndarray,
             rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, ModelOutput]:
        output = self.forward(image, tokens, rng)
        return bce_loss(output.score_map, ops.constant(np.asarray(truth, dtype=np.float64))), output

    def predict(self, image: np.ndarray, tokens: Sequence[int]) -> np.ndarray:
        """Evaluation-mode score map as a plain array (no tape, no dropout)."""
        return self.forward(image, tokens).score_map.numpy()
