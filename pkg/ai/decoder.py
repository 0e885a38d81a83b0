"""Multi-scale decoder, segmentation head and BCE loss."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from core import ops
from core.errors import ConfigurationError, DimensionError
from core.parameters import ParameterStore
from core.tensor import Tensor

logger = logging.getLogger(__name__)

WIRINGS = ("consume_all", "literal")
BCE_EPS = 1e-7


@dataclass
class DecoderState:
    """Per-stage decoder maps, finest first (ys[0] is Y_1, ys[-1] is Y_N = F_N)."""
    ys: List[Tensor] = field(default_factory=list)
    logits: Optional[Tensor] = None  # H_1 x W_1 x 1 head output
    score_map: Optional[Tensor] = None  # H_0 x W_0, values in (0, 1)

    @property
    def stages(self) -> int:
        return len(self.ys)


class Decoder:
    """Progressively merges stage features from coarse to fine.

    consume_all (default): Y_i = proj_i([up(Y_{i+1}), F_i])
    literal:               Y_i = up(proj_i([Y_{i+1}, F_{i+1}]))
    """

    def __init__(self, store: ParameterStore, stages: int, channels: int,
                 wiring: str = "consume_all", upsample_logits: bool = False):
        if wiring not in WIRINGS:
            raise ConfigurationError(f"Unknown decoder wiring: {wiring} (expected one of {WIRINGS})")
        if stages < 1:
            raise ConfigurationError(f"Decoder needs at least one stage, got {stages}")
        self.store = store
        self.stages = stages
        self.channels = channels
        self.wiring = wiring
        self.upsample_logits = upsample_logits
        self.logger = logging.getLogger(__name__)

        for index in range(1, stages):
            store.register_linear(f"decoder.proj{index}", 2 * channels, channels, owner="decoder")
        store.register_linear("decoder.head", channels, 1, owner="decoder")

    def _check_pyramid(self, features: Sequence[Tensor]) -> None:
        if len(features) != self.stages:
            raise DimensionError(f"Decoder built for {self.stages} stages, got {len(features)}")
        for index, feature in enumerate(features):
            if feature.ndim != 3 or feature.shape[2] != self.channels:
                raise DimensionError(f"Stage {index + 1} feature {feature.shape} is not H x W x {self.channels}")
            if index + 1 < len(features):
                coarse = features[index + 1]
                if feature.shape[0] != 2 * coarse.shape[0] or feature.shape[1] != 2 * coarse.shape[1]:
                    raise DimensionError(
                        f"Stage {index + 1} extents {feature.shape[:2]} are not twice "
                        f"stage {index + 2} extents {coarse.shape[:2]}"
                    )

    def run(self, features: Sequence[Tensor], output_size: Optional[Tuple[int, int]] = None) -> DecoderState:
        """Decode a pyramid given finest stage first.

        Args:
            features: F_1..F_N, each twice the extents of the next
            output_size: Score map extents (default: F_1 extents)

        Raises:
            DimensionError: If the pyramid extents are inconsistent
        """
        self._check_pyramid(features)
        count = len(features)
        y = features[-1]
        ys = [y]
        for index in range(count - 1, 0, -1):
            name = f"decoder.proj{index}"
            if self.wiring == "consume_all":
                y = ops.linear(ops.concat([ops.upsample2x(y), features[index - 1]]), name, self.store)
            else:
                y = ops.upsample2x(ops.linear(ops.concat([y, features[index]]), name, self.store))
            ys.insert(0, y)

        logits = ops.linear(y, "decoder.head", self.store)
        size = tuple(output_size) if output_size is not None else logits.shape[:2]
        if self.upsample_logits:
            scores = ops.sigmoid(ops.bilinear_resize(logits, size))
        else:
            scores = ops.bilinear_resize(ops.sigmoid(logits), size)
        score_map = ops.reshape(scores, size)
        return DecoderState(ys=ys, logits=logits, score_map=score_map)

    def decode(self, features: Sequence[Tensor], output_size: Optional[Tuple[int, int]] = None) -> Tensor:
        """Score map y' in (0, 1) at output_size."""
        return self.run(features, output_size).score_map


def bce_loss(scores: Tensor, truth: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with log arguments clamped to [eps, 1 - eps].

    Raises:
        DimensionError: If shapes differ
    """
    if scores.shape != truth.shape:
        raise DimensionError(f"Score map {scores.shape} and truth {truth.shape} differ")
    log_p = ops.log(ops.clip(scores, eps, 1.0 - eps))
    log_q = ops.log(ops.clip(1.0 - scores, eps, 1.0 - eps))
    per_pixel = ops.add(ops.mul(truth, log_p), ops.mul(1.0 - truth, log_q))
    return ops.scale(ops.mean(per_pixel), -1.0)
